//! Central finite differences: the independent gradient oracle.
//!
//! Deliberately knows nothing about the graph — it only re-evaluates a
//! closure at perturbed parameter values, so it can cross-check any
//! differentiable composite the graph produces.

use super::optim::{GradientMap, ParameterVector};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Per-coordinate `(f(p + eps) - f(p - eps)) / (2 eps)`.
pub fn finite_diff_grad<F>(objective: F, params: &ParameterVector, epsilon: f64) -> Result<GradientMap>
where
    F: Fn(&ParameterVector) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite-difference epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let mut flat = params.flat();
    let mut grads = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + epsilon;
        let hi = objective(&params.with_flat(&flat)?)?;
        flat[i] = orig - epsilon;
        let lo = objective(&params.with_flat(&flat)?)?;
        flat[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite {
                op: format!("finite_diff_grad coordinate {i}"),
            });
        }
        grads.push((hi - lo) / (2.0 * epsilon));
    }
    // Re-fold the flat gradient into the parameter shapes.
    let mut out = Vec::with_capacity(params.len());
    let mut offset = 0;
    for t in params.iter() {
        let next = offset + t.len();
        out.push(Tensor::new(t.shape().to_vec(), grads[offset..next].to_vec())?);
        offset = next;
    }
    Ok(GradientMap::new(out))
}

/// Global relative error between two gradient maps, used by the oracle tests.
pub fn relative_error(a: &GradientMap, b: &GradientMap) -> f64 {
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    for (ga, gb) in a.grads().iter().zip(b.grads()) {
        for (&x, &y) in ga.data().iter().zip(gb.data()) {
            diff_sq += (x - y) * (x - y);
            ref_sq += y * y;
        }
    }
    diff_sq.sqrt() / (ref_sq.sqrt() + 1e-12)
}
