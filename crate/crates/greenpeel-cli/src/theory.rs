//! Theoretical overlay curves: the sample-budget shape and the failure
//! probability bound.

use greenpeel::error::{Error, Result};

/// Budget shape `C0 * log(1/eps)^5 * (log log(1/eps) + log(1/gamma))^4`.
///
/// `C0` is a user-chosen fitting constant for report overlays; the absolute
/// scale is not calibrated theory.
pub fn n_theory(epsilon: f64, gamma: f64, c0: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < (-1.0f64).exp()) {
        return Err(Error::Domain(format!(
            "n_theory needs 0 < epsilon < 1/e so the iterated logarithm is positive, got {epsilon}"
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("n_theory needs 0 < gamma <= 1, got {gamma}")));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::Domain(format!("n_theory needs a positive constant, got {c0}")));
    }
    let log_inv = (1.0 / epsilon).ln();
    let bracket = log_inv.ln() + (1.0 / gamma).ln();
    Ok(c0 * log_inv.powi(5) * bracket.powi(4))
}

/// Failure probability bound `exp(-log(1/eps)^3)`.
pub fn failure_bound(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("failure_bound needs 0 < epsilon < 1, got {epsilon}")));
    }
    let log_inv = (1.0 / epsilon).ln();
    Ok((-log_inv.powi(3)).exp())
}
