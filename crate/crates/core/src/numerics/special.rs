use std::f64::consts::PI;

pub use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `Σ_{q=1..Q} ln Γ(a + (1 − q)/2)`, the multivariate gamma without its
/// `π^{Q(Q−1)/4}` factor. Ratios of collapsed Gaussian-Wishart normalizers
/// only ever need this part.
pub fn log_gamma_product(q: usize, a: f64) -> Result<f64> {
    check_domain(q, a)?;
    Ok((1..=q).map(|i| ln_gamma(a + (1.0 - i as f64) / 2.0)).sum())
}

/// `ln Γ_Q(a)`, the log multivariate gamma function.
pub fn log_multigamma(q: usize, a: f64) -> Result<f64> {
    let qf = q as f64;
    Ok(log_gamma_product(q, a)? + qf * (qf - 1.0) / 4.0 * PI.ln())
}

fn check_domain(q: usize, a: f64) -> Result<()> {
    if q == 0 {
        return Err(Error::DomainError("dimension must be positive".into()));
    }
    let lower = (q as f64 - 1.0) / 2.0;
    if !(a > lower) || !a.is_finite() {
        return Err(Error::DomainError(format!(
            "multivariate gamma of order {q} needs a > {lower}, got {a}"
        )));
    }
    Ok(())
}

/// Numerically stable `ln Σ exp(x_i)`; `-∞` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
