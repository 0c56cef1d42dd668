//! Finite-difference gradient oracle.
//!
//! Every analytic backward pass in this crate is certified against central
//! differences of the corresponding forward pass. The oracle knows nothing
//! about layers; it only evaluates a scalar function of a tensor.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `point`.
///
/// The per-coordinate step is `base_step * max(1, |x_i|)` so the step stays
/// proportionate for large coordinates without collapsing near zero.
pub fn finite_diff_grad<F>(mut f: F, point: &Tensor, base_step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if base_step <= 0.0 {
        return Err(Error::invalid(format!("step must be positive, got {base_step}")));
    }
    let mut grad = Tensor::zeros(point.shape());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x = point.data()[i];
        let h = base_step * x.abs().max(1.0);
        probe.data_mut()[i] = x + h;
        let fp = f(&probe);
        probe.data_mut()[i] = x - h;
        let fm = f(&probe);
        probe.data_mut()[i] = x;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at coordinate {i} (f+={fp}, f-={fm})"
            )));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error with the floored denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_floored(a, b, 1e-8)
}

/// Relative error with a caller-chosen denominator floor. Deep compositions
/// have structurally-zero gradients (a convolution bias feeding straight
/// into batch norm, whose mean subtraction cancels it); at those
/// coordinates both sides are pure rounding noise and the floor decides
/// what still counts as agreement.
pub fn relative_error_floored(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest per-coordinate relative error between two gradient tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    max_relative_error_floored(a, b, 1e-8)
}

/// As [`max_relative_error`], with a caller-chosen denominator floor.
pub fn max_relative_error_floored(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradient shapes must agree");
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| relative_error_floored(x, y, floor))
        .fold(0.0, f64::max)
}
