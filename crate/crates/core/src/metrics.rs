//! Face Semantic Distance, Face Semantic Similarity and Fréchet distance
//! between feature distributions.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels;
use crate::perceptual::{FeatureExtractor, LayerSet};
use crate::tensor::Tensor;

pub const FACE_FEATURE_SIZE: usize = 299;
pub const FACE_FEATURE_LAYER: &str = "conv5_3";
pub const FID_EPS: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
const NEGATIVE_FID_TOL: f64 = 1e-8;

/// Bilinear resize of a `[3, H, W]` image to 299x299, then the global
/// average of the extractor's conv5_3 map.
pub fn face_features(fe: &FeatureExtractor, img: &Tensor) -> Result<Vec<f64>> {
    let resized = resize_for_features(img)?;
    let set = LayerSet::new(&[FACE_FEATURE_LAYER], false)?;
    let map = fe.extract(&resized, &set)?.remove(0).1;
    let (c, hw) = (map.shape()[0], map.shape()[1] * map.shape()[2]);
    Ok((0..c)
        .map(|ch| map.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect())
}

pub fn resize_for_features(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] if h > 0 && w > 0 => (c, h, w),
        ref s => return Err(Error::invalid("face_features", format!("expected [C, H, W], got {s:?}"))),
    };
    let s = FACE_FEATURE_SIZE;
    Tensor::new(vec![c, s, s], kernels::bilinear_resize(img.data(), c, h, w, s, s))
}

/// How a pair's difference vector is reduced to a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FsdNorm {
    /// Euclidean norm.
    #[default]
    L2,
    /// Mean absolute component.
    MeanAbs,
}

fn check_pairs<A: AsRef<[f64]>, B: AsRef<[f64]>>(op: &'static str, pairs: &[(A, B)]) -> Result<usize> {
    let first = pairs.first().ok_or_else(|| Error::invalid(op, "no feature pairs"))?;
    let d = first.0.as_ref().len();
    for (a, b) in pairs {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a.len() != d || b.len() != d {
            return Err(Error::shape(op, &[a.len()], &[b.len().max(d)]));
        }
        if a.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::invalid(op, "non-finite feature value"));
        }
    }
    Ok(d)
}

/// Mean distance between generated and ground-truth feature vectors.
pub fn fsd<A: AsRef<[f64]>, B: AsRef<[f64]>>(pairs: &[(A, B)], norm: FsdNorm) -> Result<f64> {
    check_pairs("fsd", pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|(a, b)| {
            let diff = a.as_ref().iter().zip(b.as_ref()).map(|(x, y)| x - y);
            match norm {
                FsdNorm::L2 => diff.map(|d| d * d).sum::<f64>().sqrt(),
                FsdNorm::MeanAbs => diff.map(f64::abs).sum::<f64>() / a.as_ref().len().max(1) as f64,
            }
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Mean cosine similarity between generated and ground-truth feature
/// vectors, in [-1, 1].
pub fn fss<A: AsRef<[f64]>, B: AsRef<[f64]>>(pairs: &[(A, B)]) -> Result<f64> {
    check_pairs("fss", pairs)?;
    let mut total = 0.0;
    for (a, b) in pairs {
        let (a, b) = (a.as_ref(), b.as_ref());
        let (na, nb) = (kernels::dot(a, a).sqrt(), kernels::dot(b, b).sqrt());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::invalid("fss", "zero-norm feature vector"));
        }
        total += (kernels::dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    }
    Ok(total / pairs.len() as f64)
}

/// Principal square root of a symmetric positive semi-definite matrix via
/// its eigendecomposition. Eigenvalues in `[-1e-10 * scale, 0)` are treated
/// as zero, where `scale = max(1, largest |eigenvalue|)`.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::shape("matrix_sqrt_psd", &[m.nrows()], &[m.ncols()]));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lscale = eig.eigenvalues.amax().max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -NEGATIVE_EIGEN_TOL * lscale {
            return Err(Error::Indefinite(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Mean and regularized covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FidStats {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FidStats {
    /// Sample mean and `1/(N-1)` covariance plus `1e-6 * I`.
    pub fn from_features<A: AsRef<[f64]>>(set: &[A]) -> Result<Self> {
        if set.len() < 2 {
            return Err(Error::invalid("fid", format!("need at least 2 samples, got {}", set.len())));
        }
        let d = set[0].as_ref().len();
        if d == 0 || set.iter().any(|v| v.as_ref().len() != d) {
            return Err(Error::invalid("fid", "feature vectors must share a non-zero dimension"));
        }
        let n = set.len();
        let x = DMatrix::from_fn(n, d, |i, j| set[i].as_ref()[j]);
        let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
        let mut centered = x;
        for j in 0..d {
            let m = mu[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..d {
            cov[(i, i)] += FID_EPS;
        }
        Ok(Self { mu, cov })
    }
}

/// `|mu1 - mu2|^2 + Tr(C1 + C2 - 2 sqrt(sqrt(C1) C2 sqrt(C1)))`, clamped at
/// zero when the rounding error is below 1e-8.
pub fn fid_from_stats(a: &FidStats, b: &FidStats) -> Result<f64> {
    if a.mu.len() != b.mu.len() || a.cov.shape() != b.cov.shape() || a.cov.nrows() != a.mu.len() {
        return Err(Error::shape("fid", &[a.mu.len()], &[b.mu.len()]));
    }
    let diff = &a.mu - &b.mu;
    let s1 = matrix_sqrt_psd(&a.cov)?;
    let inner = &s1 * &b.cov * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let d2 = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if d2 < 0.0 {
        if d2 < -NEGATIVE_FID_TOL {
            return Err(Error::Indefinite(d2));
        }
        return Ok(0.0);
    }
    Ok(d2)
}

pub fn fid<A: AsRef<[f64]>, B: AsRef<[f64]>>(set_a: &[A], set_b: &[B]) -> Result<f64> {
    fid_from_stats(&FidStats::from_features(set_a)?, &FidStats::from_features(set_b)?)
}

/// One line of a metrics report: `metric=<name> value=<v> n=<N> d=<D>`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLine {
    pub name: &'static str,
    pub value: f64,
    pub n: usize,
    pub d: usize,
}

impl fmt::Display for MetricLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "metric={} value={:?} n={} d={}", self.name, self.value, self.n, self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perceptual::DEFAULT_WIDTH_DIVISOR;
    use crate::rng::{seeded, Rng};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn random_spd(d: usize, rng: &mut Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| randn(rng));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    fn random_orthogonal(d: usize, rng: &mut Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |_, _| randn(rng)).qr().q()
    }

    fn sample_set(n: usize, d: usize, shift: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| randn(rng) + shift).collect()).collect()
    }

    #[test]
    fn fsd_examples() {
        let pairs = vec![(vec![0.0, 0.0], vec![3.0, 4.0]), (vec![0.0, 0.0], vec![0.0, 0.0])];
        assert!((fsd(&pairs, FsdNorm::L2).unwrap() - 2.5).abs() < 1e-12);
        let e = vec![(vec![1.0, 0.0], vec![0.0, 1.0])];
        assert!((fsd(&e, FsdNorm::L2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(fsd(&[(vec![1.0, 2.0], vec![1.0, 2.0])], FsdNorm::L2).unwrap(), 0.0);
        assert!((fsd(&pairs, FsdNorm::MeanAbs).unwrap() - 1.75).abs() < 1e-12);
        assert!(fsd::<Vec<f64>, Vec<f64>>(&[], FsdNorm::L2).is_err());
        assert!(fsd(&[(vec![1.0], vec![1.0, 2.0])], FsdNorm::L2).is_err());
    }

    #[test]
    fn fss_examples() {
        assert_eq!(fss(&[(vec![0.3, -2.0], vec![0.3, -2.0])]).unwrap(), 1.0);
        assert_eq!(fss(&[(vec![0.3, -2.0], vec![-0.3, 2.0])]).unwrap(), -1.0);
        assert!((fss(&[(vec![1.0, 0.0], vec![1.0, 1.0])]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(fss(&[(vec![0.0, 0.0], vec![1.0, 1.0])]).is_err());
    }

    #[test]
    fn pair_order_does_not_matter() {
        let mut rng = seeded(5);
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..20).map(|_| ((0..4).map(|_| randn(&mut rng)).collect(), (0..4).map(|_| randn(&mut rng)).collect())).collect();
        let (a, b) = (fsd(&pairs, FsdNorm::L2).unwrap(), fss(&pairs).unwrap());
        pairs.reverse();
        pairs.swap(3, 11);
        assert!((fsd(&pairs, FsdNorm::L2).unwrap() - a).abs() < 1e-12);
        assert!((fss(&pairs).unwrap() - b).abs() < 1e-12);
        assert!(a >= 0.0 && (-1.0..=1.0).contains(&b));
    }

    #[test]
    fn sqrt_of_simple_matrices() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt_psd(&d).unwrap();
        assert!((s - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);
    }

    #[test]
    fn sqrt_reconstructs_random_spd() {
        for seed in 0..20 {
            let mut rng = seeded(seed);
            let a = random_spd(6, &mut rng);
            let s = matrix_sqrt_psd(&a).unwrap();
            let err = (&s * &s - &a).norm() / a.norm();
            assert!(err < 1e-8, "seed {seed}: {err}");
        }
    }

    #[test]
    fn sqrt_commutes_with_orthogonal_similarity() {
        for seed in 0..10 {
            let mut rng = seeded(100 + seed);
            let a = random_spd(5, &mut rng);
            let q = random_orthogonal(5, &mut rng);
            let lhs = matrix_sqrt_psd(&(q.transpose() * &a * &q)).unwrap();
            let rhs = q.transpose() * matrix_sqrt_psd(&a).unwrap() * &q;
            assert!((lhs - rhs).amax() < 1e-8);
        }
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(matrix_sqrt_psd(&asym), Err(Error::Asymmetric(_))));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(matrix_sqrt_psd(&indef), Err(Error::Indefinite(_))));
        let barely = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let s = matrix_sqrt_psd(&barely).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn fid_of_a_set_with_itself_is_zero() {
        let x = sample_set(40, 6, 0.0, &mut seeded(1));
        assert!(fid(&x, &x).unwrap() < 1e-8);
        assert!(fid(&x[..1], &x).is_err());
    }

    #[test]
    fn fid_closed_forms() {
        let stats = |mu: &[f64], cov: DMatrix<f64>| FidStats { mu: DVector::from_row_slice(mu), cov };
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let d = fid_from_stats(&stats(&[0.0], one(1.0)), &stats(&[1.0], one(1.0))).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let d = fid_from_stats(&stats(&[0.0], one(1.0)), &stats(&[0.0], one(4.0))).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "(sigma1 - sigma2)^2 = 1, got {d}");
        let i = DMatrix::identity(2, 2);
        let d = fid_from_stats(&stats(&[0.0, 0.0], i.clone()), &stats(&[3.0, 4.0], i)).unwrap();
        assert!((d - 25.0).abs() < 1e-9);
    }

    #[test]
    fn fid_symmetry_and_rotation_invariance() {
        let mut rng = seeded(7);
        for _ in 0..5 {
            let a = sample_set(30, 2, 0.0, &mut rng);
            let b: Vec<Vec<f64>> = sample_set(25, 2, 0.7, &mut rng)
                .into_iter()
                .map(|v| vec![1.5 * v[0], 0.5 * v[1] + 0.3 * v[0]])
                .collect();
            let ab = fid(&a, &b).unwrap();
            assert!((ab - fid(&b, &a).unwrap()).abs() < 1e-8);
            let theta: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
            let rot = |v: &Vec<f64>| vec![theta.cos() * v[0] - theta.sin() * v[1], theta.sin() * v[0] + theta.cos() * v[1]];
            let (ra, rb): (Vec<_>, Vec<_>) = (a.iter().map(rot).collect(), b.iter().map(rot).collect());
            assert!((fid(&ra, &rb).unwrap() - ab).abs() < 1e-6);
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn face_features_shape_and_determinism() {
        let fe = FeatureExtractor::init(1, DEFAULT_WIDTH_DIVISOR).unwrap();
        let img = Tensor::uniform(&[3, 8, 8], -1.0, 1.0, &mut seeded(3));
        let resized = resize_for_features(&img).unwrap();
        assert_eq!(resized.shape(), &[3, 299, 299]);
        let a = face_features(&fe, &img).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, face_features(&fe, &img).unwrap());
    }

    #[test]
    fn constant_image_stays_constant_through_resize() {
        let img = Tensor::full(&[3, 8, 8], 0.25);
        let resized = resize_for_features(&img).unwrap();
        assert!(resized.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn report_line_format() {
        let line = MetricLine { name: "fid", value: 0.5, n: 10, d: 64 };
        assert_eq!(line.to_string(), "metric=fid value=0.5 n=10 d=64");
    }
}
