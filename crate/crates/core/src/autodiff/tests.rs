use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Uniform values with |v| >= 0.05 so no sample sits on a kink.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    away_from_zero(shape, seed).map(|v| v.abs() + 0.1)
}

/// Reduces any tensor to a scalar with non-uniform weights so every output
/// component contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(away_from_zero(&shape, seed ^ 0xabcd));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn assert_grad<F>(name: &str, x: &Tensor, f: F)
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = grad_check(f, x, STEP, TOL).unwrap();
    assert!(report.passed(), "{name}: {report:?}");
    assert_eq!(report.skipped, 0, "{name}: unexpected kink crossing");
}

#[test]
fn leaky_relu_definition() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[-1.0, 2.0]));
    let y = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(y).data(), &[-0.2, 2.0]);
}

#[test]
fn identity_1x1_conv_returns_input() {
    let img = away_from_zero(&[3, 5, 4], 1);
    let mut w = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let x = g.constant(img.clone());
    let wv = g.constant(w);
    let y = g.conv2d(x, wv).unwrap();
    assert_eq!(g.value(y), &img);
}

#[test]
fn matmul_matches_triple_loop() {
    let a = t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 4.0, -1.5]);
    let b = t(&[3, 2], &[0.25, 2.0, -1.0, 1.0, 3.0, -0.5]);
    let mut expected = [0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..3 {
                expected[i * 2 + j] += a.data()[i * 3 + k] * b.data()[k * 2 + j];
            }
        }
    }
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a), g.constant(b));
    let c = g.matmul(av, bv).unwrap();
    assert_eq!(g.shape(c), &[2, 2]);
    assert_eq!(g.value(c).data(), &expected);
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::new();
    let x = g.param(away_from_zero(&[2, 3, 4], 3));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn mean_square_gradient_by_hand() {
    // d/dx mean(x^2) = 2x / N = x for N = 2
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[3.0, -1.0]));
    let sq = g.square(x);
    let m = g.mean(sq);
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[3.0, -1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[3]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    let c = g.constant(Tensor::zeros(&[4]));
    assert!(g.add(a, c).unwrap_err().to_string().starts_with("add"));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(away_from_zero(&[4], 4));
    let c = g.constant(away_from_zero(&[4], 5));
    let y = g.mul(x, c).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).is_some());
    assert!(g.grad(c).is_none());
}

#[test]
fn grad_check_of_sum_is_exact() {
    let x = away_from_zero(&[3, 4], 9);
    let r = grad_check(|g, x| Ok(g.sum(x)), &x, STEP, TOL).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn grad_check_skips_kink_samples() {
    let x = t(&[3], &[0.0, 0.5, -0.5]);
    let r = grad_check(
        |g, x| {
            let y = g.leaky_relu(x, 0.2);
            Ok(g.sum(y))
        },
        &x,
        STEP,
        TOL,
    )
    .unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.checked, 2);
    assert!(r.passed());
}

#[test]
fn accumulation_matches_sum_of_losses() {
    let xv = away_from_zero(&[5], 11);
    let build = |g: &mut Graph, x: Var| {
        let a = g.square(x);
        let l1 = g.sum(a);
        let b = g.tanh(x);
        let l2 = g.mean(b);
        (l1, l2)
    };
    let mut joint = Graph::new();
    let x = joint.param(xv.clone());
    let (l1, l2) = build(&mut joint, x);
    let total = joint.add(l1, l2).unwrap();
    joint.backward(total).unwrap();

    let mut split = Graph::new();
    let x2 = split.param(xv);
    let (m1, m2) = build(&mut split, x2);
    split.backward(m1).unwrap();
    split.backward(m2).unwrap();

    for (a, b) in joint.grad(x).unwrap().data().iter().zip(split.grad(x2).unwrap().data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.param(away_from_zero(&[2, 6, 6], 21));
        let w = g.constant(away_from_zero(&[3, 2, 3, 3], 22));
        let y = g.conv2d(x, w).unwrap();
        let y = g.leaky_relu(y, 0.2);
        let p = g.avg_pool(y, 2).unwrap();
        let s = g.square(p);
        let l = g.mean(s);
        g.backward(l).unwrap();
        (g.value(l).item().to_bits(), g.grad(x).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert!(ga.data().iter().zip(gb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn pixel_norm_gives_unit_rms() {
    // Output RMS is sqrt(ms / (ms + eps)), which is within eps / (2 ms) of 1;
    // the 1e-9 band therefore holds once the input mean square reaches 5.
    let mut rng = seeded(5);
    let x = Tensor::randn(&[16, 3, 3], 3.0, &mut rng);
    let x = x.map(|v| if v.abs() < 2.5 { v.signum() * 2.5 + v } else { v });
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = g.pixel_norm(xv, 1e-8).unwrap();
    let d = g.value(y).data();
    for p in 0..9 {
        let ms_in = (0..16).map(|c| x.data()[c * 9 + p].powi(2)).sum::<f64>() / 16.0;
        assert!(ms_in >= 5.0);
        let ms = (0..16).map(|c| d[c * 9 + p].powi(2)).sum::<f64>() / 16.0;
        assert!((ms.sqrt() - 1.0).abs() < 1e-9);
    }

    let small = Tensor::randn(&[8, 4], 0.1, &mut rng);
    let sv = g.constant(small.clone());
    let y = g.pixel_norm(sv, 1e-8).unwrap();
    for p in 0..4 {
        let ms_in = (0..8).map(|c| small.data()[c * 4 + p].powi(2)).sum::<f64>() / 8.0;
        let rms = ((0..8).map(|c| g.value(y).data()[c * 4 + p].powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!((rms - 1.0).abs() <= 1e-8 / (2.0 * ms_in) + 1e-15);
    }
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..10u64 {
        let s = seed * 100;
        let a23 = away_from_zero(&[2, 3], s + 1);
        let b32 = away_from_zero(&[3, 2], s + 2);
        assert_grad("matmul/a", &a23, |g, a| {
            let b = g.constant(b32.clone());
            let y = g.matmul(a, b)?;
            weighted_sum(g, y, s)
        });
        assert_grad("matmul/b", &b32, |g, b| {
            let a = g.constant(a23.clone());
            let y = g.matmul(a, b)?;
            weighted_sum(g, y, s)
        });

        for k in [1usize, 3] {
            let img = away_from_zero(&[2, 5, 4], s + 3);
            let w = away_from_zero(&[3, 2, k, k], s + 4);
            assert_grad("conv2d/x", &img, |g, x| {
                let wv = g.constant(w.clone());
                let y = g.conv2d(x, wv)?;
                weighted_sum(g, y, s)
            });
            assert_grad("conv2d/w", &w, |g, wv| {
                let x = g.constant(img.clone());
                let y = g.conv2d(x, wv)?;
                weighted_sum(g, y, s)
            });
        }

        let big = away_from_zero(&[3, 4], s + 5);
        let small = away_from_zero(&[4], s + 6);
        type Bin = fn(&mut Graph, Var, Var) -> Result<Var>;
        let bins: [(&str, Bin); 3] = [("add", Graph::add), ("sub", Graph::sub), ("mul", Graph::mul)];
        for (name, op) in bins {
            assert_grad(name, &big, |g, x| {
                let c = g.constant(small.clone());
                let y = op(g, x, c)?;
                weighted_sum(g, y, s)
            });
            assert_grad(name, &small, |g, x| {
                let c = g.constant(big.clone());
                let y = op(g, c, x)?;
                weighted_sum(g, y, s)
            });
        }

        let x = away_from_zero(&[3, 4], s + 7);
        let pos = positive(&[3, 4], s + 8);
        type Un = fn(&mut Graph, Var) -> Result<Var>;
        let unary: [(&str, &Tensor, Un); 11] = [
            ("scale", &x, |g, v| Ok(g.scale(v, -1.7))),
            ("add_scalar", &x, |g, v| Ok(g.add_scalar(v, 0.3))),
            ("leaky_relu", &x, |g, v| Ok(g.leaky_relu(v, 0.2))),
            ("tanh", &x, |g, v| Ok(g.tanh(v))),
            ("square", &x, |g, v| Ok(g.square(v))),
            ("sqrt_eps", &pos, |g, v| Ok(g.sqrt_eps(v, 1e-8))),
            ("reciprocal", &pos, |g, v| Ok(g.reciprocal(v))),
            ("sum_last", &x, |g, v| g.sum_last(v)),
            ("reshape", &x, |g, v| g.reshape(v, &[4, 3])),
            ("row", &x, |g, v| g.row(v, 1)),
            ("pixel_norm", &x, |g, v| g.pixel_norm(v, 1e-8)),
        ];
        for (name, input, op) in unary {
            assert_grad(name, input, |g, v| {
                let y = op(g, v)?;
                weighted_sum(g, y, s)
            });
        }
        assert_grad("sum", &x, |g, v| Ok(g.sum(v)));
        assert_grad("mean", &x, |g, v| Ok(g.mean(v)));
        assert_grad("l2_norm", &x, |g, v| Ok(g.l2_norm(v)));

        let img = away_from_zero(&[2, 4, 6], s + 9);
        let spatial: [(&str, Un); 6] = [
            ("resize_up", |g, v| g.bilinear_resize(v, 7, 9)),
            ("resize_down", |g, v| g.bilinear_resize(v, 3, 4)),
            ("upsample2", |g, v| g.upsample2(v)),
            ("avg_pool", |g, v| g.avg_pool(v, 2)),
            ("global_avg_pool", |g, v| g.global_avg_pool(v)),
            ("pixel_norm_chw", |g, v| g.pixel_norm(v, 1e-8)),
        ];
        for (name, op) in spatial {
            assert_grad(name, &img, |g, v| {
                let y = op(g, v)?;
                weighted_sum(g, y, s)
            });
        }

        let other = away_from_zero(&[3, 4, 6], s + 10);
        assert_grad("concat", &img, |g, v| {
            let o = g.constant(other.clone());
            let y = g.concat(&[o, v], 0)?;
            weighted_sum(g, y, s)
        });
        let scale = away_from_zero(&[4], s + 11);
        assert_grad("mul_axis/x", &img, |g, v| {
            let sv = g.constant(scale.clone());
            let y = g.mul_axis(v, sv, 1)?;
            weighted_sum(g, y, s)
        });
        assert_grad("mul_axis/s", &scale, |g, sv| {
            let x = g.constant(img.clone());
            let y = g.mul_axis(x, sv, 1)?;
            weighted_sum(g, y, s)
        });
        assert_grad("add_axis/b", &scale, |g, b| {
            let x = g.constant(img.clone());
            let y = g.add_axis(x, b, 1)?;
            weighted_sum(g, y, s)
        });
    }
}

proptest! {
    #[test]
    fn broadcast_add_repeats_over_leading_extents(
        rows in 1usize..5,
        vals in proptest::collection::vec(-10.0f64..10.0, 3),
        base in -5.0f64..5.0,
    ) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[rows, 3], base));
        let b = g.constant(Tensor::vector(vals.clone()));
        let y = g.add(a, b).unwrap();
        for r in 0..rows {
            for (c, v) in vals.iter().enumerate() {
                prop_assert_eq!(g.value(y).data()[r * 3 + c], base + v);
            }
        }
    }

    #[test]
    fn tracked_outputs_stay_finite(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3, 2, 2], vals).unwrap());
        let n = g.pixel_norm(x, 1e-8).unwrap();
        let t = g.tanh(n);
        let r = g.bilinear_resize(t, 5, 5).unwrap();
        let l = g.l2_norm(r);
        g.backward(l).unwrap();
        prop_assert!(g.value(l).is_finite());
        prop_assert!(g.grad(x).unwrap().is_finite());
    }
}
