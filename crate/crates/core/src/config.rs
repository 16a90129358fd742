//! Flat run configuration shared by fitting, scoring and benchmarking.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::{KernelParams, KernelPrior};
use crate::latent_mixture::{Concentration, NiwPrior};
use crate::sampler::{ChainConfig, HmcConfig};

/// How the clustering reported for a chain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PointEstimate {
    /// The retained sample with the highest joint log probability.
    #[default]
    MaxJoint,
    Last,
}

/// Every knob of a run. Missing keys take their defaults, unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Latent dimension; `0` means "same as the data".
    pub latent_dim: usize,
    pub eta: f64,
    /// Prior mean `u`, the same value in every coordinate.
    pub prior_u: f64,
    pub prior_r: f64,
    /// `S = prior_s_scale · I`.
    pub prior_s_scale: f64,
    /// Degrees of freedom `ν`; `0` means `Q`.
    pub prior_nu: f64,
    /// Fit the single-cluster model (no Gibbs sweeps).
    pub single_cluster: bool,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub target_accept: f64,
    pub update_theta: bool,
    pub log_alpha: f64,
    pub log_beta: f64,
    pub log_ell: f64,
    pub theta_prior_mean: [f64; 3],
    pub theta_prior_sd: [f64; 3],
    pub random_scan: bool,
    pub check_every: usize,
    /// Latent draws per posterior sample for the predictive density.
    pub m_inner: usize,
    /// Use at most this many (evenly spaced) retained samples for
    /// prediction; `0` keeps all.
    pub max_predictive_samples: usize,
    pub point_estimate: PointEstimate,
    pub standardize: bool,
    pub seed: u64,
    /// Benchmark datasets: a generator spec `shape:n` or a LIBSVM/CSV path.
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub folds: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = KernelParams::default();
        Self {
            latent_dim: 2,
            eta: 1.0,
            prior_u: 0.0,
            prior_r: 0.01,
            prior_s_scale: 0.25,
            prior_nu: 0.0,
            single_cluster: false,
            iterations: 5000,
            burn_in: 1000,
            thin: 5,
            leapfrog_steps: 10,
            initial_step_size: 0.01,
            target_accept: 0.8,
            update_theta: true,
            log_alpha: params.log_alpha,
            log_beta: params.log_beta,
            log_ell: params.log_ell,
            theta_prior_mean: KernelPrior::default().mean,
            theta_prior_sd: KernelPrior::default().sd,
            random_scan: false,
            check_every: 0,
            m_inner: 1000,
            max_predictive_samples: 0,
            point_estimate: PointEstimate::MaxJoint,
            standardize: true,
            seed: 0,
            datasets: vec!["two-curve:100".into()],
            methods: vec!["iwmm_q2".into(), "igmm".into(), "kde".into()],
            folds: 20,
            seeds: vec![0],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form (first 16 digits).
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolved_latent_dim(&self, observed_dim: usize) -> usize {
        if self.latent_dim == 0 {
            observed_dim
        } else {
            self.latent_dim
        }
    }

    pub fn niw_prior(&self, q: usize) -> Result<NiwPrior> {
        let nu = if self.prior_nu == 0.0 { q as f64 } else { self.prior_nu };
        NiwPrior::new(
            DVector::from_element(q, self.prior_u),
            self.prior_r,
            DMatrix::identity(q, q) * self.prior_s_scale,
            nu,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn concentration(&self) -> Result<Concentration> {
        Concentration::new(self.eta).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn kernel_params(&self) -> KernelParams {
        KernelParams::from_array([self.log_alpha, self.log_beta, self.log_ell])
    }

    /// The sampler settings for data with `observed_dim` columns.
    pub fn chain_config(&self, observed_dim: usize) -> Result<ChainConfig> {
        let q = self.resolved_latent_dim(observed_dim);
        if q == 0 || q > observed_dim {
            return Err(Error::Config(format!(
                "latent dimension {q} must be in 1..={observed_dim}"
            )));
        }
        if self.m_inner == 0 {
            return Err(Error::Config("m_inner must be at least 1".into()));
        }
        if self.theta_prior_sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("theta prior sd must be positive".into()));
        }
        let hmc = HmcConfig {
            step_size: self.initial_step_size,
            leapfrog_steps: self.leapfrog_steps,
            target_accept: self.target_accept,
        };
        let config = ChainConfig {
            latent_dim: q,
            prior: self.niw_prior(q)?,
            eta: self.concentration()?,
            single_cluster: self.single_cluster,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            hmc_x: hmc,
            hmc_theta: hmc,
            update_theta: self.update_theta,
            initial_params: self.kernel_params(),
            kernel_prior: KernelPrior {
                mean: self.theta_prior_mean,
                sd: self.theta_prior_sd,
            },
            random_scan: self.random_scan,
            check_every: self.check_every,
            seed: self.seed,
            stream: 0,
        };
        config.validate(observed_dim)?;
        Ok(config)
    }
}
