use std::f64::consts::LN_2;

use nalgebra::DMatrix;

use super::linalg::{cholesky, CholeskyFactor};
use super::special::log_multigamma;
use crate::error::{Error, Result};

/// Log density of `W(R | S⁻¹, dof)`:
/// `|R|^{(ν−Q−1)/2} exp(−½ tr(S R)) / G`,
/// `ln G = (νQ/2) ln 2 − (ν/2) ln|S| + ln Γ_Q(ν/2)`.
pub fn wishart_logpdf(r: &DMatrix<f64>, s_chol: &CholeskyFactor, dof: f64) -> Result<f64> {
    let q = s_chol.dim();
    if r.nrows() != q || r.ncols() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: r.nrows(),
        });
    }
    let qf = q as f64;
    if !(dof > qf - 1.0) {
        return Err(Error::DomainError(format!("Wishart dof {dof} <= {}", qf - 1.0)));
    }
    let r_chol = cholesky(r)?;
    if r_chol.jitter() > 0.0 {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    let s = s_chol.recompose();
    let trace = s.component_mul(&r.transpose()).sum();
    let log_norm = dof * qf / 2.0 * LN_2 - dof / 2.0 * s_chol.log_det() + log_multigamma(q, dof / 2.0)?;
    Ok((dof - qf - 1.0) / 2.0 * r_chol.log_det() - 0.5 * trace - log_norm)
}
