//! Central finite-difference gradient verification.

use crate::{Error, Result};

/// Compares `analytic` against central differences of `f` at `x`.
///
/// Returns the maximum over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    if x.len() != analytic.len() {
        return Err(Error::dim(
            format!("{} analytic gradient entries", x.len()),
            format!("{}", analytic.len()),
        ));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe)?;
        probe[i] = orig - eps;
        let fm = f(&probe)?;
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical {
                index: i,
                message: format!("non-finite function value ({fp}, {fm})"),
            });
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        if !a.is_finite() {
            return Err(Error::Numerical {
                index: i,
                message: format!("non-finite analytic gradient {a}"),
            });
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
