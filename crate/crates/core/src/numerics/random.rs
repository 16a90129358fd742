//! Seeded random streams and the exact samplers the model needs.
//!
//! Every sampler is a pure function of its parameters and the generator
//! state passed in.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use super::linalg::CholeskyFactor;
use crate::error::{Error, Result};

/// Generator used throughout. ChaCha supports 2⁶⁴ independent streams per
/// seed, which is how parallel chains and folds get disjoint randomness.
pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `x ~ N(mean, L Lᵀ)` given the covariance factor `L`.
pub fn gaussian(mean: &DVector<f64>, cov_chol: &CholeskyFactor, rng: &mut impl Rng) -> Result<DVector<f64>> {
    check_dim(cov_chol.dim(), mean.len())?;
    let eps = standard_normal_vec(mean.len(), rng);
    Ok(mean + cov_chol.lower() * eps)
}

/// `x ~ N(mean, (c·P)⁻¹)` given the factor of the precision `P = L Lᵀ`.
pub fn gaussian_with_precision(
    mean: &DVector<f64>,
    precision_chol: &CholeskyFactor,
    c: f64,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    check_dim(precision_chol.dim(), mean.len())?;
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("precision scale {c}")));
    }
    let mut z = standard_normal_vec(mean.len(), rng);
    precision_chol.backward_in_place(z.as_mut_slice());
    Ok(mean + z / c.sqrt())
}

/// Lower-triangular Bartlett factor `A` with `A Aᵀ ~ W(I, dof)`.
fn bartlett(q: usize, dof: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(dof > q as f64 - 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Wishart degrees of freedom {dof} must exceed {}",
            q as f64 - 1.0
        )));
    }
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Ok(a)
}

/// `R ~ W(Σ, dof)` given the factor of the scale matrix `Σ`; `E[R] = dof·Σ`.
pub fn wishart(scale_chol: &CholeskyFactor, dof: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let a = bartlett(scale_chol.dim(), dof, rng)?;
    let b = scale_chol.lower() * a;
    Ok(&b * b.transpose())
}

/// `R ~ W(S⁻¹, dof)` given the factor `L` of `S` (the model's
/// parameterization); `E[R] = dof·S⁻¹`.
pub fn wishart_inverse_scale(s_chol: &CholeskyFactor, dof: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let q = s_chol.dim();
    let mut b = bartlett(q, dof, rng)?;
    // B = L⁻ᵀ A, so B Bᵀ = L⁻ᵀ A Aᵀ L⁻¹ with L⁻ᵀL⁻¹ = S⁻¹.
    for col in b.as_mut_slice().chunks_exact_mut(q) {
        s_chol.backward_in_place(col);
    }
    Ok(&b * b.transpose())
}

/// Gamma draw with the given shape and rate.
pub fn gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma shape {shape}, rate {rate}")));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Index drawn proportionally to nonnegative `weights`.
pub fn categorical(weights: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidParameter(format!("categorical weight {w}")));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("categorical weights sum to zero".into()));
    }
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Ok(i);
            }
            u -= w;
            last_positive = i;
        }
    }
    // Round-off pushed `u` past the end.
    Ok(last_positive)
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
