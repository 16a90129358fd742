//! Infinite Gaussian mixture baseline: collapsed Gibbs directly on the
//! observations, scored with the closed-form Student-t mixture predictive.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::config::{PointEstimate, RunConfig};
use crate::error::{Error, Result};
use crate::latent_mixture::{posterior_stats, Assignments, ClusterStats, Concentration, LatentMixture, NiwPrior};
use crate::numerics::{log_sum_exp, stream_rng};
use crate::predictive::log_density_floor;

/// Retained iGMM samples with their predictive components.
#[derive(Debug, Clone)]
pub struct IgmmFit {
    prior: NiwPrior,
    eta: Concentration,
    assignments: Vec<Assignments>,
    joint_log_probs: Vec<f64>,
    /// Per sample: `(ln weight, stats)` for every cluster and the prior.
    components: Vec<Vec<(f64, ClusterStats)>>,
    cluster_counts: Vec<usize>,
}

/// Runs the schedule in `config` (iterations, burn-in, thinning, scan order,
/// seed) with `Q = D` and the identity warp.
pub fn igmm_fit(y: &DMatrix<f64>, config: &RunConfig) -> Result<IgmmFit> {
    let (n, d) = y.shape();
    if n == 0 {
        return Err(Error::InvalidSize("iGMM needs at least one point".into()));
    }
    if config.burn_in >= config.iterations || config.thin == 0 {
        return Err(Error::Config("need burn_in < iterations and thin ≥ 1".into()));
    }
    let prior = config.niw_prior(d)?;
    let eta = config.concentration()?;
    let mut rng = stream_rng(config.seed, 0);
    let mut mixture = LatentMixture::new(prior.clone(), eta, y, Assignments::single_cluster(n))?;
    let rows: Vec<Vec<f64>> = y.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut fit = IgmmFit {
        prior,
        eta,
        assignments: Vec::new(),
        joint_log_probs: Vec::new(),
        components: Vec::new(),
        cluster_counts: Vec::with_capacity(config.iterations),
    };
    let mut order: Vec<usize> = (0..n).collect();
    for it in 0..config.iterations {
        if config.random_scan {
            order.shuffle(&mut rng);
        }
        mixture.gibbs_sweep(y, &order, &mut rng)?;
        fit.cluster_counts.push(mixture.num_clusters());
        if it >= config.burn_in && (it - config.burn_in + 1).is_multiple_of(config.thin) {
            let a = mixture.assignments().clone();
            let total = n as f64 + eta.value();
            let mut comps = Vec::with_capacity(a.num_clusters() + 1);
            for c in 0..a.num_clusters() {
                let stats = posterior_stats(&fit.prior, a.members(c).map(|i| rows[i].as_slice()))?;
                comps.push(((a.counts()[c] as f64 / total).ln(), stats));
            }
            comps.push(((eta.value() / total).ln(), ClusterStats::empty(&fit.prior)));
            fit.joint_log_probs
                .push(mixture.log_marginal() + mixture.crp_log_prob());
            fit.assignments.push(a);
            fit.components.push(comps);
        }
    }
    Ok(fit)
}

impl IgmmFit {
    pub fn num_samples(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Assignments] {
        &self.assignments
    }

    pub fn joint_log_probs(&self) -> &[f64] {
        &self.joint_log_probs
    }

    /// Cluster count after every sweep, burn-in included.
    pub fn cluster_counts(&self) -> &[usize] {
        &self.cluster_counts
    }

    pub fn prior(&self) -> &NiwPrior {
        &self.prior
    }

    pub fn eta(&self) -> Concentration {
        self.eta
    }

    /// Reported clustering; `MaxJoint` ties go to the earliest sample.
    pub fn point_estimate(&self, rule: PointEstimate) -> Result<&Assignments> {
        let last = self.assignments.last().ok_or(Error::EmptyChain)?;
        Ok(match rule {
            PointEstimate::Last => last,
            PointEstimate::MaxJoint => {
                let mut best = 0;
                for (k, &v) in self.joint_log_probs.iter().enumerate() {
                    if v > self.joint_log_probs[best] {
                        best = k;
                    }
                }
                &self.assignments[best]
            }
        })
    }

    /// Posterior predictive log density averaged over retained samples,
    /// floored like the iWMM estimate.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if self.components.is_empty() {
            return Err(Error::EmptyChain);
        }
        if y.len() != self.prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.prior.dim(),
                found: y.len(),
            });
        }
        let per_sample: Vec<f64> = self
            .components
            .iter()
            .map(|comps| {
                let terms: Vec<f64> = comps.iter().map(|(lw, s)| lw + s.log_predictive(y)).collect();
                log_sum_exp(&terms)
            })
            .collect();
        let value = log_sum_exp(&per_sample) - (per_sample.len() as f64).ln();
        Ok(if value.is_finite() {
            value.max(log_density_floor())
        } else {
            log_density_floor()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random::standard_normal_vec;

    fn short_config() -> RunConfig {
        RunConfig {
            iterations: 300,
            burn_in: 100,
            thin: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn predictive_integrates_to_one() {
        let y = DMatrix::from_column_slice(6, 1, &[-1.2, -0.9, -1.0, 1.1, 0.8, 1.3]);
        let config = RunConfig {
            prior_nu: 3.0,
            ..short_config()
        };
        let fit = igmm_fit(&y, &config).unwrap();
        let (lo, hi, m) = (-200.0, 200.0, 400_000);
        let h = (hi - lo) / m as f64;
        let mass: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * fit.log_density(&[lo + i as f64 * h]).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        // Heavy Student-t tails beyond ±200 hold a little mass.
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn one_gaussian_gives_one_cluster() {
        let mut rng = stream_rng(4, 0);
        let y = DMatrix::from_column_slice(60, 2, standard_normal_vec(120, &mut rng).as_slice());
        let mut cfg = short_config();
        cfg.prior_r = 0.01;
        let fit = igmm_fit(&y, &cfg).unwrap();
        let mut hist = std::collections::HashMap::new();
        for a in fit.assignments() {
            *hist.entry(a.num_clusters()).or_insert(0) += 1;
        }
        let modal = hist.iter().max_by_key(|(_, &c)| c).map(|(&k, _)| k).unwrap();
        assert_eq!(modal, 1, "{hist:?}");
    }

    #[test]
    fn deterministic() {
        let y = DMatrix::from_fn(10, 2, |i, j| ((i * 7 + j * 3) as f64).sin());
        let a = igmm_fit(&y, &short_config()).unwrap();
        let b = igmm_fit(&y, &short_config()).unwrap();
        assert_eq!(a.assignments(), b.assignments());
        assert_eq!(a.log_density(&[0.1, 0.2]).unwrap(), b.log_density(&[0.1, 0.2]).unwrap());
    }
}
