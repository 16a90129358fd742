//! MCMC over `(Z, X, θ)`: collapsed Gibbs for the partition, HMC for the
//! latent coordinates and for the log kernel hyperparameters, plus forward
//! simulation from the generative model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{gplvm_gradients, gram_matrix, GplvmGradients, KernelParams, KernelPrior};
use crate::latent_mixture::{
    sample_component_params, Assignments, ClusterStats, Concentration, LatentMixture, NiwPrior,
};
use crate::numerics::random::{categorical, gaussian_with_precision, standard_normal_vec};
use crate::numerics::{cholesky, stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Acceptance rate that burn-in adaptation aims for.
    pub target_accept: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            leapfrog_steps: 10,
            target_accept: 0.8,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("HMC step size {}", self.step_size)));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("HMC needs at least one leapfrog step".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("HMC target acceptance {}", self.target_accept)));
        }
        Ok(())
    }
}

/// Log target, its gradient, and whatever the target wants to carry along
/// with an accepted position.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub log_target: f64,
    pub gradient: DVector<f64>,
    pub aux: T,
}

#[derive(Debug, Clone)]
pub struct HmcOutcome<T> {
    pub position: DVector<f64>,
    pub current: Evaluation<T>,
    pub accepted: bool,
    /// `min(1, exp(−ΔH))`, zero for a diverging trajectory.
    pub accept_prob: f64,
}

/// One HMC transition from `position` whose evaluation is already known.
///
/// Leapfrog with identity mass. A trajectory that reaches a non-finite or
/// numerically invalid target is rejected.
pub fn hmc_transition<T: Clone>(
    position: &DVector<f64>,
    current: Evaluation<T>,
    mut target: impl FnMut(&DVector<f64>) -> Result<Evaluation<T>>,
    config: &HmcConfig,
    rng: &mut impl Rng,
) -> HmcOutcome<T> {
    let eps = config.step_size;
    let mut p = standard_normal_vec(position.len(), rng);
    let h0 = -current.log_target + 0.5 * p.norm_squared();
    let mut x = position.clone();
    p.axpy(0.5 * eps, &current.gradient, 1.0);
    let mut proposal = None;
    for step in 0..config.leapfrog_steps {
        x.axpy(eps, &p, 1.0);
        let eval = match target(&x) {
            Ok(e) if e.log_target.is_finite() && e.gradient.iter().all(|g| g.is_finite()) => e,
            _ => break,
        };
        let scale = if step + 1 == config.leapfrog_steps { 0.5 } else { 1.0 };
        p.axpy(scale * eps, &eval.gradient, 1.0);
        if step + 1 == config.leapfrog_steps {
            proposal = Some(eval);
        }
    }
    let reject = |current| HmcOutcome {
        position: position.clone(),
        current,
        accepted: false,
        accept_prob: 0.0,
    };
    let Some(eval) = proposal else {
        return reject(current);
    };
    let h1 = -eval.log_target + 0.5 * p.norm_squared();
    let log_ratio = h0 - h1;
    if !log_ratio.is_finite() && log_ratio != f64::INFINITY {
        return reject(current);
    }
    let accept_prob = log_ratio.min(0.0).exp();
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        HmcOutcome {
            position: x,
            current: eval,
            accepted: true,
            accept_prob,
        }
    } else {
        HmcOutcome {
            position: position.clone(),
            current,
            accepted: false,
            accept_prob,
        }
    }
}

/// Convenience form that evaluates the starting point first.
pub fn hmc_step<T: Clone>(
    position: &DVector<f64>,
    mut target: impl FnMut(&DVector<f64>) -> Result<Evaluation<T>>,
    config: &HmcConfig,
    rng: &mut impl Rng,
) -> Result<HmcOutcome<T>> {
    let current = target(position)?;
    if !current.log_target.is_finite() {
        return Err(Error::NonFiniteTarget);
    }
    Ok(hmc_transition(position, current, target, config, rng))
}

/// Nesterov dual averaging of `ln ε` towards a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;
    const LOG_EPS_RANGE: (f64, f64) = (-12.0, 1.0);

    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            target,
            h_bar: 0.0,
            log_eps: initial_step.ln(),
            log_eps_bar: initial_step.ln(),
            t: 0.0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn adapted_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let (lo, hi) = Self::LOG_EPS_RANGE;
        self.log_eps = (self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar).clamp(lo, hi);
        let k = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = k * self.log_eps + (1.0 - k) * self.log_eps_bar;
    }
}

/// Everything `run_chain` needs besides the data.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub latent_dim: usize,
    pub prior: NiwPrior,
    pub eta: Concentration,
    /// Keep every point in one cluster and skip Gibbs (the C = 1 model).
    pub single_cluster: bool,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub hmc_x: HmcConfig,
    pub hmc_theta: HmcConfig,
    pub update_theta: bool,
    pub initial_params: KernelParams,
    pub kernel_prior: KernelPrior,
    /// Visit points in a fresh random order each sweep instead of `0..N`.
    pub random_scan: bool,
    /// Compare maintained cluster statistics to batch ones every this many
    /// iterations; zero disables the check.
    pub check_every: usize,
    pub seed: u64,
    pub stream: u64,
}

impl ChainConfig {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            prior: NiwPrior::standard(latent_dim.max(1)),
            eta: Concentration::new(1.0).expect("positive"),
            single_cluster: false,
            iterations: 5000,
            burn_in: 1000,
            thin: 5,
            hmc_x: HmcConfig::default(),
            hmc_theta: HmcConfig::default(),
            update_theta: true,
            initial_params: KernelParams::default(),
            kernel_prior: KernelPrior::default(),
            random_scan: false,
            check_every: 0,
            seed: 0,
            stream: 0,
        }
    }

    pub fn validate(&self, observed_dim: usize) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim > observed_dim {
            return Err(Error::Config(format!(
                "latent dimension {} must be in 1..={observed_dim}",
                self.latent_dim
            )));
        }
        if self.prior.dim() != self.latent_dim {
            return Err(Error::Config(format!(
                "prior dimension {} differs from latent dimension {}",
                self.prior.dim(),
                self.latent_dim
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} leaves no samples out of {} iterations",
                self.burn_in, self.iterations
            )));
        }
        self.hmc_x.validate()?;
        self.hmc_theta.validate()
    }
}

/// Deep snapshot of one retained state.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub x: DMatrix<f64>,
    pub assignments: Assignments,
    pub params: KernelParams,
    /// `ln p(Y|X,θ) + ln p(X|Z) + ln p(Z|η)`.
    pub joint_log_prob: f64,
    pub iteration: usize,
}

/// Starting latent coordinates: `Y` itself when `Q = D`, else its top `Q`
/// principal-component scores scaled to unit variance.
pub fn initial_latent(y: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    let (n, d) = y.shape();
    if q == 0 || q > d {
        return Err(Error::Config(format!("latent dimension {q} must be in 1..={d}")));
    }
    if q == d {
        return Ok(y.clone());
    }
    let mean = y.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| y[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut x = DMatrix::zeros(n, q);
    for (k, &idx) in order.iter().take(q).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // Pin the sign so the result does not depend on the eigensolver.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0, |m: f64, e| if e.abs() > m.abs() { e } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        let scores = &centered * v;
        let sd = (scores.norm_squared() / (n.max(2) - 1) as f64).sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        x.set_column(k, &(scores * scale));
    }
    Ok(x)
}

fn flatten(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

fn unflatten(v: &DVector<f64>, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, q, v.as_slice())
}

/// Current `(X, Z, θ)` with cached GP gradients and cluster statistics.
#[derive(Debug, Clone)]
pub struct ChainState {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    mixture: LatentMixture,
    params: KernelParams,
    gp: GplvmGradients,
    rng: StreamRng,
}

impl ChainState {
    pub fn new(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        assignments: Assignments,
        params: KernelParams,
        prior: NiwPrior,
        eta: Concentration,
        rng: StreamRng,
    ) -> Result<Self> {
        let mixture = LatentMixture::new(prior, eta, &x, assignments)?;
        let gp = gplvm_gradients(&y, &x, &params)?;
        Ok(Self {
            y,
            x,
            mixture,
            params,
            gp,
            rng,
        })
    }

    /// The chain's starting state for `config`.
    pub fn initial(y: &DMatrix<f64>, config: &ChainConfig) -> Result<Self> {
        config.validate(y.ncols())?;
        let x = initial_latent(y, config.latent_dim)?;
        Self::new(
            y.clone(),
            x,
            Assignments::single_cluster(y.nrows()),
            config.initial_params,
            config.prior.clone(),
            config.eta,
            stream_rng(config.seed, config.stream),
        )
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn mixture(&self) -> &LatentMixture {
        &self.mixture
    }

    pub fn assignments(&self) -> &Assignments {
        self.mixture.assignments()
    }

    pub fn clusters(&self) -> &[ClusterStats] {
        self.mixture.clusters()
    }

    pub fn rng(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Replaces the observations, keeping `(X, Z, θ)`.
    pub fn set_y(&mut self, y: DMatrix<f64>) -> Result<()> {
        self.gp = gplvm_gradients(&y, &self.x, &self.params)?;
        self.y = y;
        Ok(())
    }

    pub fn gplvm_log_marginal(&self) -> f64 {
        self.gp.value
    }

    pub fn joint_log_prob(&self) -> f64 {
        self.gp.value + self.mixture.log_marginal() + self.mixture.crp_log_prob()
    }

    /// Resamples every `z_n` given `X`; `Y` plays no part.
    pub fn gibbs_sweep(&mut self, random_scan: bool) -> Result<()> {
        let mut order: Vec<usize> = (0..self.x.nrows()).collect();
        if random_scan {
            order.shuffle(&mut self.rng);
        }
        self.mixture.gibbs_sweep(&self.x, &order, &mut self.rng)
    }

    /// HMC on `X` targeting `ln p(Y|X,θ) + ln p(X|Z)`.
    pub fn hmc_x(&mut self, config: &HmcConfig) -> (bool, f64) {
        let (n, q) = self.x.shape();
        let y = &self.y;
        let params = self.params;
        let base = &self.mixture;
        let evaluate = |x: &DMatrix<f64>, gp: GplvmGradients, mixture: LatentMixture| {
            let gradient = flatten(&(&gp.d_x + mixture.grad_log_prior(x)));
            Evaluation {
                log_target: gp.value + mixture.log_marginal(),
                gradient,
                aux: (gp, mixture),
            }
        };
        let target = |v: &DVector<f64>| -> Result<Evaluation<(GplvmGradients, LatentMixture)>> {
            let x = unflatten(v, n, q);
            let gp = gplvm_gradients(y, &x, &params)?;
            let mut mixture = base.clone();
            mixture.rebuild(&x)?;
            Ok(evaluate(&x, gp, mixture))
        };
        let current = evaluate(&self.x, self.gp.clone(), base.clone());
        let outcome = hmc_transition(&flatten(&self.x), current, target, config, &mut self.rng);
        if outcome.accepted {
            let (gp, mixture) = outcome.current.aux;
            self.x = unflatten(&outcome.position, n, q);
            self.mixture = mixture;
            self.gp = gp;
        }
        (outcome.accepted, outcome.accept_prob)
    }

    /// HMC on `(ln α, ln β, ln ℓ)` targeting `ln p(Y|X,θ) + ln p(θ)`.
    pub fn hmc_theta(&mut self, config: &HmcConfig, prior: &KernelPrior) -> (bool, f64) {
        let y = &self.y;
        let x = &self.x;
        let evaluate = |gp: GplvmGradients, params: &KernelParams| {
            let (lp, dlp) = prior.log_density(params);
            let gradient = DVector::from_fn(3, |i, _| gp.d_log_params[i] + dlp[i]);
            Evaluation {
                log_target: gp.value + lp,
                gradient,
                aux: gp,
            }
        };
        let target = |v: &DVector<f64>| -> Result<Evaluation<GplvmGradients>> {
            let params = KernelParams::from_array([v[0], v[1], v[2]]);
            let gp = gplvm_gradients(y, x, &params)?;
            Ok(evaluate(gp, &params))
        };
        let start = DVector::from_column_slice(&self.params.to_array());
        let current = evaluate(self.gp.clone(), &self.params);
        let outcome = hmc_transition(&start, current, target, config, &mut self.rng);
        if outcome.accepted {
            let p = &outcome.position;
            self.params = KernelParams::from_array([p[0], p[1], p[2]]);
            self.gp = outcome.current.aux;
        }
        (outcome.accepted, outcome.accept_prob)
    }

    pub fn snapshot(&self, iteration: usize) -> PosteriorSample {
        PosteriorSample {
            x: self.x.clone(),
            assignments: self.mixture.assignments().clone(),
            params: self.params,
            joint_log_prob: self.joint_log_prob(),
            iteration,
        }
    }

    /// Largest gap between maintained and batch cluster statistics.
    pub fn stats_drift(&self) -> Result<f64> {
        let mut fresh = self.mixture.clone();
        fresh.rebuild(&self.x)?;
        let mut worst: f64 = 0.0;
        for (a, b) in self.mixture.clusters().iter().zip(fresh.clusters()) {
            worst = worst
                .max((a.u_c() - b.u_c()).amax())
                .max((a.scatter() - b.scatter()).amax())
                .max((a.r_c() - b.r_c()).abs())
                .max((a.nu_c() - b.nu_c()).abs());
        }
        Ok(worst)
    }
}

/// Per-chain diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub accept_rate_x: f64,
    pub accept_rate_theta: f64,
    pub step_size_x: f64,
    pub step_size_theta: f64,
    /// Number of clusters after every iteration.
    pub cluster_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub samples: Vec<PosteriorSample>,
    pub diagnostics: ChainDiagnostics,
}

/// Runs one chain on (standardized) observations `y`.
///
/// Each iteration does a Gibbs sweep, an HMC move on `X`, and an HMC move on
/// `θ`. Step sizes adapt only during burn-in. Samples are kept every `thin`
/// iterations after burn-in.
pub fn run_chain(y: &DMatrix<f64>, config: &ChainConfig) -> Result<ChainRun> {
    let mut state = ChainState::initial(y, config)?;
    let mut adapt_x = DualAveraging::new(config.hmc_x.step_size, config.hmc_x.target_accept);
    let mut adapt_theta = DualAveraging::new(config.hmc_theta.step_size, config.hmc_theta.target_accept);
    let mut hmc_x = config.hmc_x;
    let mut hmc_theta = config.hmc_theta;
    let mut samples = Vec::new();
    let mut diagnostics = ChainDiagnostics::default();
    let (mut acc_x, mut acc_theta, mut counted) = (0usize, 0usize, 0usize);
    let fail = |iteration: usize| {
        move |e: Error| Error::ChainFailure {
            iteration,
            source: Box::new(e),
        }
    };

    for it in 0..config.iterations {
        let adapting = it < config.burn_in;
        if !config.single_cluster {
            state.gibbs_sweep(config.random_scan).map_err(fail(it))?;
        }
        if adapting {
            hmc_x.step_size = adapt_x.step_size();
        }
        let (ax, px) = state.hmc_x(&hmc_x);
        if adapting {
            adapt_x.update(px);
        }
        let (mut at, mut pt) = (false, 1.0);
        if config.update_theta {
            if adapting {
                hmc_theta.step_size = adapt_theta.step_size();
            }
            (at, pt) = state.hmc_theta(&hmc_theta, &config.kernel_prior);
            if adapting {
                adapt_theta.update(pt);
            }
        }
        if it + 1 == config.burn_in {
            hmc_x.step_size = adapt_x.adapted_step_size();
            hmc_theta.step_size = adapt_theta.adapted_step_size();
        }
        if !adapting {
            counted += 1;
            acc_x += ax as usize;
            acc_theta += at as usize;
        }
        if config.check_every > 0 && (it + 1) % config.check_every == 0 {
            let drift = state.stats_drift().map_err(fail(it))?;
            if drift > 1e-8 {
                log::warn!("iteration {it}: cluster statistics drifted by {drift:.3e}; rebuilding");
                state.mixture.rebuild(&state.x).map_err(fail(it))?;
            }
        }
        diagnostics.cluster_counts.push(state.mixture.num_clusters());
        if !adapting && (it - config.burn_in + 1).is_multiple_of(config.thin) {
            samples.push(state.snapshot(it));
        }
        if (it + 1) % 100 == 0 {
            log::debug!(
                "iter={} clusters={} joint={:.3} eps_x={:.3e} acc_x={} eps_theta={:.3e} acc_theta={:.2} theta={:?}",
                it + 1,
                state.mixture.num_clusters(),
                state.joint_log_prob(),
                hmc_x.step_size,
                px,
                hmc_theta.step_size,
                pt,
                state.params.to_array()
            );
        }
    }
    let denom = counted.max(1) as f64;
    diagnostics.accept_rate_x = acc_x as f64 / denom;
    diagnostics.accept_rate_theta = acc_theta as f64 / denom;
    diagnostics.step_size_x = hmc_x.step_size;
    diagnostics.step_size_theta = hmc_theta.step_size;
    log::info!(
        "chain done: {} samples, acceptance x={:.2} theta={:.2}",
        samples.len(),
        diagnostics.accept_rate_x,
        diagnostics.accept_rate_theta
    );
    Ok(ChainRun { samples, diagnostics })
}

/// Forward draw of `(X, Z, Y)` from the model: a sequential CRP partition,
/// Gaussian-Wishart component parameters, Gaussian latent points, then each
/// column of `Y` from `N(0, K(X))`.
pub fn prior_simulate(
    n: usize,
    d: usize,
    prior: &NiwPrior,
    eta: Concentration,
    params: &KernelParams,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, Assignments, DMatrix<f64>)> {
    let q = prior.dim();
    let mut labels = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        weights.clear();
        weights.extend(counts.iter().map(|&c| c as f64 / (i as f64 + eta.value())));
        weights.push(eta.value() / (i as f64 + eta.value()));
        let c = categorical(&weights, rng)?;
        if c == counts.len() {
            counts.push(0);
        }
        counts[c] += 1;
        labels.push(c);
    }
    let empty = ClusterStats::empty(prior);
    let mut components = Vec::with_capacity(counts.len());
    for _ in 0..counts.len() {
        let (mu, r) = sample_component_params(&empty, rng)?;
        components.push((mu, cholesky(&r)?));
    }
    let mut x = DMatrix::zeros(n, q);
    for (i, &c) in labels.iter().enumerate() {
        let (mu, r_chol) = &components[c];
        let xi = gaussian_with_precision(mu, r_chol, 1.0, rng)?;
        x.set_row(i, &xi.transpose());
    }
    let gram = gram_matrix(&x, params)?;
    let eps = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = gram.chol().lower() * eps;
    Ok((x, Assignments::from_labels(&labels), y))
}
