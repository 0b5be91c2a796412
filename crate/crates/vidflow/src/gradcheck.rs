//! Finite-difference verification of reverse-mode gradients.
//!
//! The check runs at f64 so central differences with the default step 1e-4
//! resolve clearly against analytic gradients. The probed function must be
//! deterministic; this is verified by evaluating the base point twice and
//! requiring bit-equal losses.
//!
//! Known limitation: central differences are meaningless at nonsmooth points
//! (e.g. |x| at 0); such points are excluded from the gradient contract and
//! the test suite documents them instead of asserting the bound there.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_FD_EPS: f64 = 1e-4;

/// Closure contract: evaluate the scalar objective at the given parameter
/// values and return `(loss, gradient per parameter tensor)`.
pub type FdTarget<'a> = &'a mut dyn FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>;

/// Compare reverse-mode gradients against central finite differences on
/// `probe_count` randomly chosen parameter coordinates.
///
/// Returns the max relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    f: FdTarget<'_>,
    init: &[Tensor<f64>],
    probe_count: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if init.is_empty() {
        return Err(Error::invalid("finite_diff_check", "no parameters"));
    }
    let (loss_a, grads) = f(init)?;
    let (loss_b, _) = f(init)?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "objective returned {loss_a} then {loss_b} for identical inputs"
        )));
    }
    if grads.len() != init.len() {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("{} grads for {} params", grads.len(), init.len()),
        ));
    }

    let total: usize = init.iter().map(|t| t.numel()).sum();
    let mut max_rel = 0.0f64;
    for _ in 0..probe_count {
        // pick a coordinate uniformly over all parameter elements
        let mut flat = rng.below(total);
        let mut ti = 0;
        while flat >= init[ti].numel() {
            flat -= init[ti].numel();
            ti += 1;
        }

        let perturbed = |f: FdTarget<'_>, delta: f64| -> Result<f64> {
            let mut params: Vec<Tensor<f64>> = init.to_vec();
            let mut data = params[ti].data().to_vec();
            data[flat] += delta;
            params[ti] = Tensor::from_vec(params[ti].shape().to_vec(), data)?;
            Ok(f(&params)?.0)
        };
        let plus = perturbed(&mut *f, eps)?;
        let minus = perturbed(&mut *f, -eps)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads[ti].data()[flat];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
