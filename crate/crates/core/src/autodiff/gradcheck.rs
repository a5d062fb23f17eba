use crate::error::Result;
use crate::tensor::Tensor;

use super::{Graph, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-component relative error over checked components.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components whose finite-difference stencil crossed an activation kink.
    pub skipped: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Components smaller than this fraction of the largest gradient component
/// are compared against that floor instead of their own magnitude.
const RELATIVE_FLOOR: f64 = 1e-3;

/// Compares the reverse-mode gradient of scalar `f` at `x` against central
/// differences with the given `step`.
///
/// The relative error of component `i` is
/// `|a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max_j max(|a_j|, |n_j|))`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv)?;
    g.backward(y)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |xs: Tensor| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::with_kink_tracking();
        let xv = g.constant(xs);
        let y = f(&mut g, xv)?;
        Ok((g.value(y).item(), g.kink_signature()))
    };

    let mut numeric = Vec::with_capacity(x.numel());
    let mut skipped = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let (fp, sp) = eval(plus)?;
        let (fm, sm) = eval(minus)?;
        skipped.push(sp != sm);
        numeric.push((fp - fm) / (2.0 * step));
    }

    let scale = analytic
        .data()
        .iter()
        .zip(&numeric)
        .zip(&skipped)
        .filter(|(_, &s)| !s)
        .fold(0.0f64, |m, ((a, n), _)| m.max(a.abs()).max(n.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    for ((a, n), s) in analytic.data().iter().zip(&numeric).zip(&skipped) {
        if *s {
            continue;
        }
        checked += 1;
        let denom = a.abs().max(n.abs()).max(floor);
        max_rel_error = max_rel_error.max((a - n).abs() / denom);
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked,
        skipped: skipped.iter().filter(|&&s| s).count(),
        tol,
    })
}
