//! The Gaussian-process warp: RBF + noise kernel, the GPLVM marginal
//! likelihood with its analytic gradients, and the GP conditional used for
//! prediction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, CholeskyFactor};

/// Kernel hyperparameters `(α, β, ℓ)`, stored as logarithms.
///
/// `α` is the signal variance, `β` the noise precision and `ℓ` the length-scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_alpha: f64,
    pub log_beta: f64,
    pub log_ell: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            log_alpha: 0.0,
            log_beta: 10f64.ln(),
            log_ell: 0.0,
        }
    }
}

impl KernelParams {
    pub fn new(alpha: f64, beta: f64, ell: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && ell > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel parameters must be positive: α={alpha}, β={beta}, ℓ={ell}"
            )));
        }
        Ok(Self {
            log_alpha: alpha.ln(),
            log_beta: beta.ln(),
            log_ell: ell.ln(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn ell(&self) -> f64 {
        self.log_ell.exp()
    }

    /// `β⁻¹`.
    pub fn noise_variance(&self) -> f64 {
        (-self.log_beta).exp()
    }

    /// `k(x, x) = α + β⁻¹` for a point with itself.
    pub fn self_covariance(&self) -> f64 {
        self.alpha() + self.noise_variance()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.log_alpha, self.log_beta, self.log_ell]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            log_alpha: v[0],
            log_beta: v[1],
            log_ell: v[2],
        }
    }

    fn rbf(&self, sq_dist: f64) -> f64 {
        self.alpha() * (-0.5 * sq_dist / (self.ell() * self.ell())).exp()
    }
}

/// Independent normal prior on the log hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPrior {
    pub mean: [f64; 3],
    pub sd: [f64; 3],
}

impl Default for KernelPrior {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            sd: [1.0; 3],
        }
    }
}

impl KernelPrior {
    /// Log density (up to a constant) and its gradient.
    pub fn log_density(&self, params: &KernelParams) -> (f64, [f64; 3]) {
        let v = params.to_array();
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for i in 0..3 {
            let z = (v[i] - self.mean[i]) / self.sd[i];
            value -= 0.5 * z * z;
            grad[i] = -z / self.sd[i];
        }
        (value, grad)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `α exp(−‖x_n − x_m‖² / 2ℓ²) + δ_nm β⁻¹`, where `δ_nm` is set by
/// `same_index` (an index property, not a coordinate one).
pub fn kernel_eval(x_n: &[f64], x_m: &[f64], params: &KernelParams, same_index: bool) -> Result<f64> {
    if x_n.len() != x_m.len() {
        return Err(Error::DimensionMismatch {
            expected: x_n.len(),
            found: x_m.len(),
        });
    }
    let noise = if same_index { params.noise_variance() } else { 0.0 };
    Ok(params.rbf(sq_dist(x_n, x_m)) + noise)
}

/// Row-major copy of an `N × Q` matrix, so points are contiguous.
pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, q) = x.shape();
    let mut out = Vec::with_capacity(n * q);
    for i in 0..n {
        out.extend(x.row(i).iter());
    }
    out
}

/// Kernel matrix over a latent configuration, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    k: DMatrix<f64>,
    chol: CholeskyFactor,
    params: KernelParams,
    x_version: u64,
}

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// Token of the latent coordinates this matrix was built from.
    pub fn x_version(&self) -> u64 {
        self.x_version
    }

    pub fn with_x_version(mut self, version: u64) -> Self {
        self.x_version = version;
        self
    }
}

/// Builds `K(X)` (points are rows of `x`) and factors it.
pub fn gram_matrix(x: &DMatrix<f64>, params: &KernelParams) -> Result<GramMatrix> {
    let (n, q) = x.shape();
    if n == 0 {
        return Err(Error::InvalidSize("gram matrix of zero points".into()));
    }
    let rows = rows_of(x);
    let alpha = params.alpha();
    let scale = -0.5 / (params.ell() * params.ell());
    let diag = params.self_covariance();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        let xj = &rows[j * q..(j + 1) * q];
        k[(j, j)] = diag;
        for i in (j + 1)..n {
            let v = alpha * (scale * sq_dist(&rows[i * q..(i + 1) * q], xj)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let chol = cholesky(&k)?;
    Ok(GramMatrix {
        k,
        chol,
        params: *params,
        x_version: 0,
    })
}

fn check_rows(y: &DMatrix<f64>, n: usize) -> Result<()> {
    if y.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.nrows(),
        });
    }
    Ok(())
}

/// `ln p(Y | X, θ) = −(DN/2) ln 2π − (D/2) ln|K| − ½ tr(Yᵀ K⁻¹ Y)`.
pub fn gplvm_log_marginal(y: &DMatrix<f64>, gram: &GramMatrix) -> Result<f64> {
    check_rows(y, gram.dim())?;
    let (n, d) = y.shape();
    let (solved, log_det) = gram.chol.solve_and_logdet(y)?;
    let quad = y.component_mul(&solved).sum();
    Ok(log_marginal_from_parts(n, d, log_det, quad))
}

fn log_marginal_from_parts(n: usize, d: usize, log_det: f64, quad: f64) -> f64 {
    let (n, d) = (n as f64, d as f64);
    -0.5 * d * n * (2.0 * PI).ln() - 0.5 * d * log_det - 0.5 * quad
}

/// Value and gradients of the GPLVM log marginal likelihood.
#[derive(Debug, Clone)]
pub struct GplvmGradients {
    pub value: f64,
    /// `∂L/∂X`, `N × Q`.
    pub d_x: DMatrix<f64>,
    /// `∂L/∂(ln α, ln β, ln ℓ)`.
    pub d_log_params: [f64; 3],
    pub gram: GramMatrix,
}

/// Gradients of `ln p(Y | X, θ)` through `∂L/∂K = −(D/2)K⁻¹ + ½K⁻¹YYᵀK⁻¹`.
pub fn gplvm_gradients(y: &DMatrix<f64>, x: &DMatrix<f64>, params: &KernelParams) -> Result<GplvmGradients> {
    check_rows(y, x.nrows())?;
    let gram = gram_matrix(x, params)?;
    let (n, d) = y.shape();
    let q = x.ncols();
    let a = gram.chol.solve(y)?;
    let quad = y.component_mul(&a).sum();
    let value = log_marginal_from_parts(n, d, gram.chol.log_det(), quad);

    // W = ∂L/∂K, then C = W ∘ (K − β⁻¹I), the RBF part.
    let mut c = &a * a.transpose();
    let kinv = gram.chol.inverse();
    let df = d as f64;
    let noise = params.noise_variance();
    let mut trace_w = 0.0;
    {
        let cs = c.as_mut_slice();
        let ks = gram.k.as_slice();
        let is = kinv.as_slice();
        for idx in 0..n * n {
            cs[idx] = 0.5 * (cs[idx] - df * is[idx]);
        }
        for i in 0..n {
            trace_w += cs[i * n + i];
        }
        for idx in 0..n * n {
            cs[idx] *= ks[idx];
        }
        for i in 0..n {
            // Diagonal of K includes the noise; strip it from the RBF part.
            cs[i * n + i] *= (ks[i * n + i] - noise) / ks[i * n + i];
        }
    }
    let row_sums: Vec<f64> = (0..n).map(|i| c.column(i).sum()).collect();
    let cx = &c * x;

    let inv_ell2 = 1.0 / (params.ell() * params.ell());
    let mut d_x = DMatrix::zeros(n, q);
    let mut weighted_sq = 0.0;
    for j in 0..q {
        for i in 0..n {
            let xi = x[(i, j)];
            d_x[(i, j)] = -2.0 * inv_ell2 * (row_sums[i] * xi - cx[(i, j)]);
            weighted_sq += row_sums[i] * xi * xi - xi * cx[(i, j)];
        }
    }
    // Σ_nm C_nm ‖x_n − x_m‖² = 2 Σ_n rowsum_n ‖x_n‖² − 2 tr(Xᵀ C X).
    let d_log_ell = 2.0 * weighted_sq * inv_ell2;
    let d_log_alpha = c.sum();
    let d_log_beta = -noise * trace_w;

    Ok(GplvmGradients {
        value,
        d_x,
        d_log_params: [d_log_alpha, d_log_beta, d_log_ell],
        gram,
    })
}

/// Precomputed GP posterior over the warp for one latent configuration.
#[derive(Debug, Clone)]
pub struct GpPredictor {
    rows: Vec<f64>,
    q: usize,
    weights: DMatrix<f64>,
    gram: GramMatrix,
}

impl GpPredictor {
    pub fn new(x: &DMatrix<f64>, y: &DMatrix<f64>, gram: GramMatrix) -> Result<Self> {
        check_rows(y, gram.dim())?;
        check_rows(x, gram.dim())?;
        let weights = gram.chol.solve(y)?;
        Ok(Self {
            rows: rows_of(x),
            q: x.ncols(),
            weights,
            gram,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Mean `k*ᵀ K⁻¹ Y` and shared variance `k(x*,x*) − k*ᵀ K⁻¹ k*` at a new
    /// latent point (never identified with a training index).
    pub fn predict(&self, x_star: &[f64]) -> Result<(DVector<f64>, f64)> {
        if x_star.len() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                found: x_star.len(),
            });
        }
        let params = &self.gram.params;
        let n = self.gram.dim();
        let mut k_star = DVector::from_fn(n, |i, _| {
            params.rbf(sq_dist(&self.rows[i * self.q..(i + 1) * self.q], x_star))
        });
        let mean = self.weights.tr_mul(&k_star);
        self.gram.chol.forward_in_place(k_star.as_mut_slice());
        let var = params.self_covariance() - k_star.norm_squared();
        if var < -1e-10 {
            return Err(Error::NegativeVariance(var));
        }
        Ok((mean, var.max(0.0)))
    }
}

/// One-shot GP conditional at `x_star`.
pub fn gp_conditional(
    x_star: &[f64],
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    gram: &GramMatrix,
) -> Result<(DVector<f64>, f64)> {
    GpPredictor::new(x, y, gram.clone())?.predict(x_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.5..1.5))
    }

    fn random_params(rng: &mut impl Rng) -> KernelParams {
        KernelParams {
            log_alpha: rng.random_range(-1.0..1.0),
            log_beta: rng.random_range(0.0..3.0),
            log_ell: rng.random_range(-0.5..0.7),
        }
    }

    #[test]
    fn kernel_cases() {
        let p = KernelParams::new(1.0, 10.0, 0.5).unwrap();
        assert_relative_eq!(kernel_eval(&[0.3, 1.0], &[0.3, 1.0], &p, true).unwrap(), 1.1);
        let p2 = KernelParams::new(2.5, 10.0, 0.5).unwrap();
        assert_eq!(kernel_eval(&[0.3], &[0.3], &p2, false).unwrap(), 2.5);
        let far = kernel_eval(&[0.0], &[100.0 * 0.5], &p, false).unwrap();
        assert!(far < 1e-300);
        assert!(kernel_eval(&[0.0], &[0.0, 1.0], &p, false).is_err());
    }

    #[test]
    fn single_point_gram() {
        let p = KernelParams::new(2.0, 4.0, 1.0).unwrap();
        let g = gram_matrix(&DMatrix::from_element(1, 2, 0.7), &p).unwrap();
        assert_relative_eq!(g.matrix()[(0, 0)], 2.25, epsilon = 1e-15);
    }

    #[test]
    fn gram_symmetric_with_constant_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 10, 50] {
            let x = random_matrix(n, 2, &mut rng);
            let p = random_params(&mut rng);
            let g = gram_matrix(&x, &p).unwrap();
            assert_eq!(g.matrix(), &g.matrix().transpose());
            for i in 0..n {
                assert_relative_eq!(g.matrix()[(i, i)], p.self_covariance(), epsilon = 1e-14);
            }
            assert_eq!(g.chol().jitter(), 0.0);
            assert!((g.chol().recompose() - g.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn univariate_marginal() {
        let p = KernelParams::new(1.3, 2.0, 1.0).unwrap();
        let g = gram_matrix(&DMatrix::from_element(1, 1, 0.0), &p).unwrap();
        let y = DMatrix::from_element(1, 1, 0.8);
        let k = 1.3 + 0.5;
        let expected = -0.5 * (2.0 * PI * k).ln() - 0.64 / (2.0 * k);
        assert_relative_eq!(gplvm_log_marginal(&y, &g).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn marginal_is_sum_over_output_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(12, 2, &mut rng);
        let y = random_matrix(12, 3, &mut rng);
        let p = random_params(&mut rng);
        let g = gram_matrix(&x, &p).unwrap();
        let total = gplvm_log_marginal(&y, &g).unwrap();
        // Per-dimension Gaussian log density, written out independently.
        let kinv = g.matrix().clone().try_inverse().unwrap();
        let logdet = g.matrix().clone().determinant().ln();
        let per_dim: f64 = (0..3)
            .map(|d| {
                let col = y.column(d).into_owned();
                -6.0 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * (col.transpose() * &kinv * &col)[(0, 0)]
            })
            .sum();
        assert_relative_eq!(total, per_dim, epsilon = 1e-9);
    }

    #[test]
    fn marginal_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(8, 2, &mut rng);
        let y = random_matrix(8, 2, &mut rng);
        let p = random_params(&mut rng);
        let perm = [3, 0, 7, 1, 6, 2, 5, 4];
        let xp = DMatrix::from_fn(8, 2, |i, j| x[(perm[i], j)]);
        let yp = DMatrix::from_fn(8, 2, |i, j| y[(perm[i], j)]);
        let a = gplvm_log_marginal(&y, &gram_matrix(&x, &p).unwrap()).unwrap();
        let b = gplvm_log_marginal(&yp, &gram_matrix(&xp, &p).unwrap()).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn marginal_decreases_when_observations_scale_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(6, 1, &mut rng);
        let y = random_matrix(6, 2, &mut rng);
        let g = gram_matrix(&x, &random_params(&mut rng)).unwrap();
        assert!(gplvm_log_marginal(&(&y * 2.0), &g).unwrap() < gplvm_log_marginal(&y, &g).unwrap());
    }

    #[test]
    fn x_gradient_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(10, 3, &mut rng);
        let y = random_matrix(10, 2, &mut rng);
        let g = gplvm_gradients(&y, &x, &random_params(&mut rng)).unwrap();
        for j in 0..3 {
            assert!(g.d_x.column(j).sum().abs() < 1e-10);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-5;
        for _ in 0..20 {
            let n = rng.random_range(2..=10);
            let q = rng.random_range(1..=3);
            let d = rng.random_range(1..=3);
            let x = random_matrix(n, q, &mut rng);
            let y = random_matrix(n, d, &mut rng);
            let p = random_params(&mut rng);
            let g = gplvm_gradients(&y, &x, &p).unwrap();
            let f = |x: &DMatrix<f64>, p: &KernelParams| gplvm_log_marginal(&y, &gram_matrix(x, p).unwrap()).unwrap();
            assert_relative_eq!(g.value, f(&x, &p), epsilon = 1e-10);
            for i in 0..n {
                for j in 0..q {
                    let mut xp = x.clone();
                    xp[(i, j)] += h;
                    let mut xm = x.clone();
                    xm[(i, j)] -= h;
                    let fd = (f(&xp, &p) - f(&xm, &p)) / (2.0 * h);
                    assert!(rel_err(g.d_x[(i, j)], fd) < 1e-5, "{} vs {fd}", g.d_x[(i, j)]);
                }
            }
            for k in 0..3 {
                let mut up = p.to_array();
                up[k] += h;
                let mut dn = p.to_array();
                dn[k] -= h;
                let fd = (f(&x, &KernelParams::from_array(up)) - f(&x, &KernelParams::from_array(dn))) / (2.0 * h);
                assert!(
                    rel_err(g.d_log_params[k], fd) < 1e-5,
                    "param {k}: {} vs {fd}",
                    g.d_log_params[k]
                );
            }
        }
    }

    #[test]
    fn conditional_single_point() {
        let p = KernelParams::new(1.5, 4.0, 0.8).unwrap();
        let x = DMatrix::from_element(1, 1, 0.2);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let g = gram_matrix(&x, &p).unwrap();
        let (mean, var) = gp_conditional(&[0.2], &x, &y, &g).unwrap();
        let kk = 1.5 + 0.25;
        assert_relative_eq!(mean[0], 1.5 / kk, epsilon = 1e-14);
        assert_relative_eq!(mean[1], -3.0 / kk, epsilon = 1e-14);
        assert_relative_eq!(var, kk - 1.5 * 1.5 / kk, epsilon = 1e-14);
    }

    #[test]
    fn conditional_far_away_reverts_to_prior() {
        let p = KernelParams::new(1.5, 4.0, 0.8).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let g = gram_matrix(&x, &p).unwrap();
        let (mean, var) = gp_conditional(&[1.0 + 100.0 * 0.8], &x, &y, &g).unwrap();
        assert!(mean.amax() < 1e-300);
        assert_relative_eq!(var, p.self_covariance(), epsilon = 1e-15);
    }

    #[test]
    fn conditional_variance_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let n = rng.random_range(1..=6);
            let x = random_matrix(n, 2, &mut rng);
            let y = random_matrix(n, 1, &mut rng);
            let p = KernelParams {
                log_beta: rng.random_range(0.0..8.0),
                ..random_params(&mut rng)
            };
            let g = gram_matrix(&x, &p).unwrap();
            let xs = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (_, var) = gp_conditional(&xs, &x, &y, &g).unwrap();
            assert!(var >= 0.0);
        }
    }

    #[test]
    fn conditional_variance_shrinks_as_point_approaches() {
        let p = KernelParams::new(1.0, 50.0, 0.5).unwrap();
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let pos = 3.0 - 0.15 * step as f64;
            let x = DMatrix::from_row_slice(2, 1, &[-2.0, pos]);
            let g = gram_matrix(&x, &p).unwrap();
            let (_, var) = gp_conditional(&[0.0], &x, &y, &g).unwrap();
            assert!(var <= last + 1e-12);
            last = var;
        }
    }

    #[test]
    fn prior_gradient() {
        let prior = KernelPrior::default();
        let p = KernelParams::from_array([0.5, -1.0, 2.0]);
        let (v, g) = prior.log_density(&p);
        assert_relative_eq!(v, -0.5 * (0.25 + 1.0 + 4.0));
        assert_eq!(g, [-0.5, 1.0, -2.0]);
    }
}
