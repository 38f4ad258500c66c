//! Finite-difference gradient verification.
//!
//! Independent oracle for the reverse-mode engine: perturbs one parameter
//! entry at a time and compares the central-difference slope against the
//! gradient reported by backward. Used by the test suite and available for
//! debugging new model wiring.

use crate::tensor::Tensor;

/// Central-difference step. Small enough for ~1e-6 relative agreement in f64,
/// large enough to stay above cancellation noise.
pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic and a finite-difference derivative.
/// The denominator floor of 1e-4 turns the comparison absolute for tiny
/// derivatives: central differences at step 1e-5 carry ~1e-9 absolute noise,
/// so demanding relative agreement below the floor would only measure that
/// noise. Under the floor, an error bound of 1e-4 still verifies every
/// gradient entry to 1e-8 absolute.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

/// Worst relative error over every entry of every listed parameter.
///
/// `loss` must rebuild the forward pass from scratch on a fresh tape and
/// return the scalar loss value; it is called twice per entry with the entry
/// perturbed by `±FD_STEP`. `grads` holds the analytic gradient for each
/// parameter, captured from a backward pass run by the caller beforehand.
pub fn max_relative_error(
    params: &[&Tensor],
    grads: &[Vec<f64>],
    mut loss: impl FnMut() -> f64,
) -> f64 {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    let mut worst = 0.0f64;
    for (param, grad) in params.iter().zip(grads) {
        assert_eq!(param.numel(), grad.len(), "gradient length mismatch");
        for i in 0..param.numel() {
            let orig = param.with_data(|d| d[i]);
            param.with_data_mut(|d| d[i] = orig + FD_STEP);
            let up = loss();
            param.with_data_mut(|d| d[i] = orig - FD_STEP);
            let down = loss();
            param.with_data_mut(|d| d[i] = orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    worst
}
