//! Collapsed Dirichlet-process Gaussian mixture over latent coordinates.
//!
//! Component means and precisions carry a Gaussian-Wishart prior
//! `N(μ | u, (rR)⁻¹) W(R | S⁻¹, ν)` and are integrated out; clusters are
//! represented only by their posterior sufficient statistics. The partition
//! follows the Chinese restaurant process with concentration `η`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::random::{gaussian_with_precision, wishart_inverse_scale};
use crate::numerics::{cholesky, ln_gamma, log_gamma_product, log_sum_exp, CholeskyFactor, Direction};

/// Gaussian-Wishart prior `(u, r, S, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwPrior {
    u: DVector<f64>,
    r: f64,
    s: DMatrix<f64>,
    nu: f64,
    s_chol: CholeskyFactor,
}

impl NiwPrior {
    pub fn new(u: DVector<f64>, r: f64, s: DMatrix<f64>, nu: f64) -> Result<Self> {
        let q = u.len();
        if q == 0 {
            return Err(Error::InvalidParameter("latent dimension must be positive".into()));
        }
        if s.nrows() != q || s.ncols() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: s.nrows(),
            });
        }
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("relative precision r = {r}")));
        }
        if !(nu > q as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom ν = {nu} must exceed Q − 1 = {}",
                q - 1
            )));
        }
        let s_chol = cholesky(&s)?;
        if s_chol.jitter() > 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: 0 });
        }
        Ok(Self { u, r, s, nu, s_chol })
    }

    /// `u = 0`, `r = 1`, `S = I`, `ν = Q + 2`.
    pub fn standard(q: usize) -> Self {
        Self::new(DVector::zeros(q), 1.0, DMatrix::identity(q, q), q as f64 + 2.0).expect("standard prior is valid")
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn s_chol(&self) -> &CholeskyFactor {
        &self.s_chol
    }
}

/// DP concentration `η > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concentration(f64);

impl Concentration {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!("concentration η = {eta}")));
        }
        Ok(Self(eta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Posterior Gaussian-Wishart parameters of one cluster.
///
/// `S_c` is only held through its Cholesky factor, which is refreshed by
/// rank-one updates as points come and go.
#[derive(Debug, Clone)]
pub struct ClusterStats {
    count: usize,
    r_c: f64,
    nu_c: f64,
    u_c: DVector<f64>,
    sum_x: DVector<f64>,
    s_chol: CholeskyFactor,
    log_det_s: f64,
}

impl ClusterStats {
    /// Statistics of a cluster with no points: the prior itself.
    pub fn empty(prior: &NiwPrior) -> Self {
        Self {
            count: 0,
            r_c: prior.r,
            nu_c: prior.nu,
            u_c: prior.u.clone(),
            sum_x: DVector::zeros(prior.dim()),
            s_chol: prior.s_chol.clone(),
            log_det_s: prior.s_chol.log_det(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn r_c(&self) -> f64 {
        self.r_c
    }

    pub fn nu_c(&self) -> f64 {
        self.nu_c
    }

    pub fn u_c(&self) -> &DVector<f64> {
        &self.u_c
    }

    pub fn sum_x(&self) -> &DVector<f64> {
        &self.sum_x
    }

    pub fn s_chol(&self) -> &CholeskyFactor {
        &self.s_chol
    }

    pub fn dim(&self) -> usize {
        self.u_c.len()
    }

    /// `S_c` reassembled from its factor.
    pub fn scatter(&self) -> DMatrix<f64> {
        self.s_chol.recompose()
    }

    fn refresh_mean(&mut self, prior: &NiwPrior) {
        self.u_c = (&prior.u * prior.r + &self.sum_x) / self.r_c;
    }

    /// Adds `x`: `S_c ← S_c + r_c/(r_c+1) (x − u_c)(x − u_c)ᵀ` with the
    /// pre-update `r_c, u_c`.
    pub fn add(&mut self, x: &[f64], prior: &NiwPrior) -> Result<()> {
        self.check_dim(x.len())?;
        let scale = (self.r_c / (self.r_c + 1.0)).sqrt();
        let v: Vec<f64> = x.iter().zip(self.u_c.iter()).map(|(a, b)| scale * (a - b)).collect();
        self.s_chol.update_in_place(&v, Direction::Add)?;
        self.log_det_s = self.s_chol.log_det();
        self.count += 1;
        self.r_c += 1.0;
        self.nu_c += 1.0;
        for (s, &xi) in self.sum_x.iter_mut().zip(x) {
            *s += xi;
        }
        self.refresh_mean(prior);
        Ok(())
    }

    /// Removes a previously added `x`, mirroring [`ClusterStats::add`] with a
    /// downdate by `√(r_c/(r_c−1)) (x − u_c)` at the current statistics.
    ///
    /// Emptying the cluster restores the prior fields exactly. A failed
    /// downdate returns [`Error::DowndateFailure`] and leaves `self` as it was.
    pub fn remove(&mut self, x: &[f64], prior: &NiwPrior) -> Result<()> {
        self.check_dim(x.len())?;
        if self.count == 0 {
            return Err(Error::InvalidParameter("remove from an empty cluster".into()));
        }
        if self.count == 1 {
            *self = Self::empty(prior);
            return Ok(());
        }
        let scale = (self.r_c / (self.r_c - 1.0)).sqrt();
        let v: Vec<f64> = x.iter().zip(self.u_c.iter()).map(|(a, b)| scale * (a - b)).collect();
        self.s_chol.update_in_place(&v, Direction::Remove)?;
        self.log_det_s = self.s_chol.log_det();
        self.count -= 1;
        self.r_c -= 1.0;
        self.nu_c -= 1.0;
        for (s, &xi) in self.sum_x.iter_mut().zip(x) {
            *s -= xi;
        }
        self.refresh_mean(prior);
        Ok(())
    }

    /// `ln` of the collapsed normalizer
    /// `π^{−N_c Q/2} r_c^{−Q/2} |S_c|^{−ν_c/2} Π_q Γ((ν_c+1−q)/2)`.
    /// The marginal of a cluster's points is this minus the prior's value.
    pub fn log_normalizer(&self) -> f64 {
        let q = self.dim() as f64;
        -(self.count as f64) * q / 2.0 * PI.ln() - q / 2.0 * self.r_c.ln() - self.nu_c / 2.0 * self.log_det_s
            + log_gamma_product(self.dim(), self.nu_c / 2.0).expect("ν_c > Q − 1")
    }

    /// `ln p(x | cluster)`: the ratio of normalizers with and without `x`.
    pub fn log_predictive(&self, x: &[f64]) -> f64 {
        let q = self.dim();
        let qf = q as f64;
        let mut v: Vec<f64> = x.iter().zip(self.u_c.iter()).map(|(a, b)| a - b).collect();
        self.s_chol.forward_in_place(&mut v);
        let maha: f64 = v.iter().map(|t| t * t).sum();
        let k = self.r_c / (self.r_c + 1.0);
        let nu_new = self.nu_c + 1.0;
        // |S'| = |S_c| (1 + k ‖L⁻¹(x − u_c)‖²); the Γ product telescopes.
        -qf / 2.0 * PI.ln() + qf / 2.0 * k.ln() - 0.5 * self.log_det_s - nu_new / 2.0 * (k * maha).ln_1p()
            + ln_gamma((self.nu_c + 1.0) / 2.0)
            - ln_gamma((self.nu_c + 1.0 - qf) / 2.0)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

/// Batch posterior statistics:
/// `r_c = r + N_c`, `ν_c = ν + N_c`, `u_c = (ru + Σx)/r_c`,
/// `S_c = S + Σxxᵀ + ruuᵀ − r_c u_c u_cᵀ`.
pub fn posterior_stats<'a>(prior: &NiwPrior, points: impl IntoIterator<Item = &'a [f64]>) -> Result<ClusterStats> {
    let q = prior.dim();
    let mut count = 0usize;
    let mut sum_x = DVector::zeros(q);
    let mut sum_xx = DMatrix::zeros(q, q);
    for x in points {
        if x.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: x.len(),
            });
        }
        let xv = DVector::from_column_slice(x);
        sum_x += &xv;
        sum_xx += &xv * xv.transpose();
        count += 1;
    }
    if count == 0 {
        return Ok(ClusterStats::empty(prior));
    }
    let r_c = prior.r + count as f64;
    let u_c = (&prior.u * prior.r + &sum_x) / r_c;
    let s_c = &prior.s + sum_xx + &prior.u * prior.u.transpose() * prior.r - &u_c * u_c.transpose() * r_c;
    // Round-off can leave tiny asymmetries in the subtraction above.
    let s_c = (&s_c + s_c.transpose()) * 0.5;
    let s_chol = cholesky(&s_c)?;
    Ok(ClusterStats {
        count,
        r_c,
        nu_c: prior.nu + count as f64,
        u_c,
        sum_x,
        log_det_s: s_chol.log_det(),
        s_chol,
    })
}

/// Cluster labels for every point, kept compact: ids are `0..C` and every
/// id is occupied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    z: Vec<usize>,
    counts: Vec<usize>,
}

impl Assignments {
    pub fn single_cluster(n: usize) -> Self {
        Self {
            z: vec![0; n],
            counts: if n == 0 { vec![] } else { vec![n] },
        }
    }

    /// Relabels arbitrary ids to `0..C` in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut counts = Vec::new();
        let z = labels
            .iter()
            .map(|l| {
                let next = map.len();
                let id = *map.entry(*l).or_insert(next);
                if id == counts.len() {
                    counts.push(0);
                }
                counts[id] += 1;
                id
            })
            .collect();
        Self { z, counts }
    }

    /// Keeps the ids as given; every id in `0..C` must be used.
    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        let c = ids.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0; c];
        for &id in ids {
            counts[id] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::InvalidParameter("cluster ids must be contiguous from 0".into()));
        }
        Ok(Self {
            z: ids.to_vec(),
            counts,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.z
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn cluster_of(&self, n: usize) -> usize {
        self.z[n]
    }

    pub fn members(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.z
            .iter()
            .enumerate()
            .filter(move |(_, &zc)| zc == c)
            .map(|(i, _)| i)
    }
}

/// `ln p(Z | η) = C ln η + Σ_c ln (N_c − 1)! − Σ_{i<N} ln(η + i)`.
pub fn crp_log_prob(counts: &[usize], eta: Concentration) -> f64 {
    let eta = eta.value();
    let n: usize = counts.iter().sum();
    let occupied = counts.iter().filter(|&&c| c > 0);
    let mut value = 0.0;
    for &c in occupied {
        value += eta.ln() + ln_gamma(c as f64);
    }
    value - (0..n).map(|i| (eta + i as f64).ln()).sum::<f64>()
}

fn row(x: &DMatrix<f64>, n: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(x.row(n).iter());
}

/// Collapsed `ln p(X | Z)` computed from scratch.
pub fn log_marginal_x(x: &DMatrix<f64>, assignments: &Assignments, prior: &NiwPrior) -> Result<f64> {
    if x.nrows() != assignments.len() {
        return Err(Error::LengthMismatch(x.nrows(), assignments.len()));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
    let base = ClusterStats::empty(prior).log_normalizer();
    let mut total = 0.0;
    for c in 0..assignments.num_clusters() {
        let stats = posterior_stats(prior, assignments.members(c).map(|i| rows[i].as_slice()))?;
        total += stats.log_normalizer() - base;
    }
    Ok(total)
}

/// Draws `(μ, R)` with `R ~ W(S_c⁻¹, ν_c)` and `μ ~ N(u_c, (r_c R)⁻¹)`.
pub fn sample_component_params(stats: &ClusterStats, rng: &mut impl Rng) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let r = wishart_inverse_scale(&stats.s_chol, stats.nu_c, rng)?;
    let r_chol = cholesky(&r)?;
    let mu = gaussian_with_precision(&stats.u_c, &r_chol, stats.r_c, rng)?;
    Ok((mu, r))
}

/// A partition of latent points together with per-cluster statistics.
#[derive(Debug, Clone)]
pub struct LatentMixture {
    prior: NiwPrior,
    eta: Concentration,
    assignments: Assignments,
    clusters: Vec<ClusterStats>,
    prior_stats: ClusterStats,
}

impl LatentMixture {
    pub fn new(prior: NiwPrior, eta: Concentration, x: &DMatrix<f64>, assignments: Assignments) -> Result<Self> {
        if x.ncols() != prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: prior.dim(),
                found: x.ncols(),
            });
        }
        if x.nrows() != assignments.len() {
            return Err(Error::LengthMismatch(x.nrows(), assignments.len()));
        }
        let prior_stats = ClusterStats::empty(&prior);
        let mut mixture = Self {
            prior,
            eta,
            assignments,
            clusters: Vec::new(),
            prior_stats,
        };
        mixture.rebuild(x)?;
        Ok(mixture)
    }

    pub fn prior(&self) -> &NiwPrior {
        &self.prior
    }

    pub fn eta(&self) -> Concentration {
        self.eta
    }

    pub fn assignments(&self) -> &Assignments {
        &self.assignments
    }

    pub fn clusters(&self) -> &[ClusterStats] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Recomputes every cluster's statistics from `x` in batch.
    pub fn rebuild(&mut self, x: &DMatrix<f64>) -> Result<()> {
        let mut buf = Vec::new();
        let mut clusters = Vec::with_capacity(self.assignments.num_clusters());
        for c in 0..self.assignments.num_clusters() {
            let rows: Vec<Vec<f64>> = self
                .assignments
                .members(c)
                .map(|i| {
                    row(x, i, &mut buf);
                    buf.clone()
                })
                .collect();
            clusters.push(posterior_stats(&self.prior, rows.iter().map(|r| r.as_slice()))?);
        }
        self.clusters = clusters;
        Ok(())
    }

    /// `ln p(X | Z)` from the maintained statistics.
    pub fn log_marginal(&self) -> f64 {
        let base = self.prior_stats.log_normalizer();
        self.clusters.iter().map(|c| c.log_normalizer() - base).sum()
    }

    pub fn crp_log_prob(&self) -> f64 {
        crp_log_prob(self.assignments.counts(), self.eta)
    }

    /// Takes point `n` out of its cluster, deleting the cluster (and
    /// compacting ids) if it empties.
    fn detach(&mut self, n: usize, x: &DMatrix<f64>, xn: &[f64]) -> Result<()> {
        let c = self.assignments.z[n];
        match self.clusters[c].remove(xn, &self.prior) {
            Ok(()) => {}
            Err(Error::DowndateFailure) => {
                let mut buf = Vec::new();
                let rows: Vec<Vec<f64>> = self
                    .assignments
                    .members(c)
                    .filter(|&i| i != n)
                    .map(|i| {
                        row(x, i, &mut buf);
                        buf.clone()
                    })
                    .collect();
                self.clusters[c] = posterior_stats(&self.prior, rows.iter().map(|r| r.as_slice()))?;
            }
            Err(e) => return Err(e),
        }
        self.assignments.counts[c] -= 1;
        self.assignments.z[n] = usize::MAX;
        if self.assignments.counts[c] == 0 {
            let last = self.clusters.len() - 1;
            self.clusters.swap_remove(c);
            self.assignments.counts.swap_remove(c);
            if c != last {
                for zi in self.assignments.z.iter_mut() {
                    if *zi == last {
                        *zi = c;
                    }
                }
            }
        }
        Ok(())
    }

    /// Puts a detached point into cluster `c`; `c == C` opens a new cluster.
    fn attach(&mut self, n: usize, c: usize, xn: &[f64]) -> Result<()> {
        if c == self.clusters.len() {
            self.clusters.push(self.prior_stats.clone());
            self.assignments.counts.push(0);
        }
        self.clusters[c].add(xn, &self.prior)?;
        self.assignments.counts[c] += 1;
        self.assignments.z[n] = c;
        Ok(())
    }

    /// Normalized conditional over the existing clusters plus a new one for a
    /// point currently detached from the mixture:
    /// `∝ N_c p(x | X_c)` for existing clusters, `∝ η p(x | prior)` for new.
    fn conditional(&self, xn: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (stats, &count) in self.clusters.iter().zip(&self.assignments.counts) {
            out.push((count as f64).ln() + stats.log_predictive(xn));
        }
        out.push(self.eta.value().ln() + self.prior_stats.log_predictive(xn));
        let norm = log_sum_exp(out);
        for w in out.iter_mut() {
            *w = (*w - norm).exp();
        }
    }

    /// Gibbs conditional for point `n`, with `n` conceptually removed from
    /// its cluster first. The last entry is the new-cluster weight.
    pub fn gibbs_weights(&self, n: usize, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut tmp = self.clone();
        let mut xn = Vec::new();
        row(x, n, &mut xn);
        tmp.detach(n, x, &xn)?;
        let mut out = Vec::new();
        tmp.conditional(&xn, &mut out);
        Ok(out)
    }

    /// One collapsed Gibbs pass over the points in `order`.
    pub fn gibbs_sweep(&mut self, x: &DMatrix<f64>, order: &[usize], rng: &mut impl Rng) -> Result<()> {
        let mut xn = Vec::new();
        let mut weights = Vec::new();
        for &n in order {
            row(x, n, &mut xn);
            self.detach(n, x, &xn)?;
            self.conditional(&xn, &mut weights);
            let c = crate::numerics::random::categorical(&weights, rng)?;
            self.attach(n, c, &xn)?;
        }
        Ok(())
    }

    /// `∂ ln p(X | Z)/∂x_n = −ν_c S_c⁻¹ (x_n − u_c)` for every point, using
    /// the point-inclusive statistics of its cluster.
    pub fn grad_log_prior(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, q) = x.shape();
        let mut grad = DMatrix::zeros(n, q);
        let mut v = vec![0.0; q];
        for i in 0..n {
            let stats = &self.clusters[self.assignments.z[i]];
            for j in 0..q {
                v[j] = x[(i, j)] - stats.u_c[j];
            }
            stats.s_chol.forward_in_place(&mut v);
            stats.s_chol.backward_in_place(&mut v);
            for j in 0..q {
                grad[(i, j)] = -stats.nu_c * v[j];
            }
        }
        grad
    }
}
