//! Monte Carlo posterior predictive density in observed space.
//!
//! For each retained posterior sample, latent points `x*` are drawn from the
//! sample's mixture (a fresh component drawn from the prior with probability
//! `η/(N+η)`) and pushed through the GP conditional. Each draw contributes
//! a spherical Gaussian `N(y*; m(x*), v(x*) I)`; the density is their average.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gp::{gram_matrix, GpPredictor};
use crate::latent_mixture::{posterior_stats, sample_component_params, ClusterStats, Concentration, NiwPrior};
use crate::numerics::random::{categorical, gaussian_with_precision};
use crate::numerics::{cholesky, stream_rng};
use crate::sampler::PosteriorSample;

/// Lower bound on reported log densities, `ln` of the smallest positive
/// normal `f64`.
pub fn log_density_floor() -> f64 {
    f64::MIN_POSITIVE.ln()
}

/// RNG streams for prediction start here so they never overlap the chain's.
const PREDICTIVE_STREAM_BASE: u64 = 1 << 40;

/// Draws new latent points from one posterior sample's mixture.
#[derive(Debug, Clone)]
pub struct LatentStarSampler {
    /// Posterior statistics of each occupied cluster, then the prior.
    components: Vec<ClusterStats>,
    weights: Vec<f64>,
}

impl LatentStarSampler {
    pub fn new(sample: &PosteriorSample, prior: &NiwPrior, eta: Concentration) -> Result<Self> {
        let x = &sample.x;
        if x.ncols() != prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: prior.dim(),
                found: x.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        let a = &sample.assignments;
        let mut components = Vec::with_capacity(a.num_clusters() + 1);
        let mut weights = Vec::with_capacity(a.num_clusters() + 1);
        for c in 0..a.num_clusters() {
            components.push(posterior_stats(prior, a.members(c).map(|i| rows[i].as_slice()))?);
            weights.push(a.counts()[c] as f64);
        }
        components.push(ClusterStats::empty(prior));
        weights.push(eta.value());
        let total = a.len() as f64 + eta.value();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { components, weights })
    }

    /// Component probabilities; the last entry is the new-component branch.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let k = categorical(&self.weights, rng)?;
        let (mu, r) = sample_component_params(&self.components[k], rng)?;
        gaussian_with_precision(&mu, &cholesky(&r)?, 1.0, rng)
    }
}

/// One draw `x* ~ p(x* | sample)`.
pub fn draw_latent_star(
    sample: &PosteriorSample,
    prior: &NiwPrior,
    eta: Concentration,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    LatentStarSampler::new(sample, prior, eta)?.draw(rng)
}

/// The warped Gaussian contributions behind a predictive estimate.
#[derive(Debug, Clone)]
pub struct PredictiveDensity {
    d: usize,
    /// Row-major `draws × D` means.
    means: Vec<f64>,
    /// Per draw: `−(D/2) ln(2π v)`.
    log_norms: Vec<f64>,
    /// Per draw: `1 / (2v)`.
    half_precisions: Vec<f64>,
    samples: usize,
    m_inner: usize,
}

struct Pool {
    means: Vec<f64>,
    log_norms: Vec<f64>,
    half_precisions: Vec<f64>,
}

fn draw_pool(
    sample: &PosteriorSample,
    train_y: &DMatrix<f64>,
    prior: &NiwPrior,
    eta: Concentration,
    m_inner: usize,
    rng: &mut impl Rng,
) -> Result<Pool> {
    let d = train_y.ncols();
    let latent = LatentStarSampler::new(sample, prior, eta)?;
    let gram = gram_matrix(&sample.x, &sample.params)?;
    let gp = GpPredictor::new(&sample.x, train_y, gram)?;
    let noise = sample.params.noise_variance();
    let mut pool = Pool {
        means: Vec::with_capacity(m_inner * d),
        log_norms: Vec::with_capacity(m_inner),
        half_precisions: Vec::with_capacity(m_inner),
    };
    for _ in 0..m_inner {
        let x_star = latent.draw(rng)?;
        let (mean, var) = gp.predict(x_star.as_slice())?;
        // The predictive variance already includes the noise; the floor only
        // guards against cancellation.
        let var = var.max(noise * 1e-12).max(f64::MIN_POSITIVE);
        pool.means.extend(mean.iter());
        pool.log_norms.push(-0.5 * d as f64 * (2.0 * PI * var).ln());
        pool.half_precisions.push(0.5 / var);
    }
    Ok(pool)
}

impl PredictiveDensity {
    /// Draws `m_inner` warped points per sample. Sample `s` uses its own RNG
    /// stream, so the result does not depend on `exec`.
    pub fn new(
        samples: &[PosteriorSample],
        train_y: &DMatrix<f64>,
        prior: &NiwPrior,
        eta: Concentration,
        m_inner: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyChain);
        }
        if m_inner == 0 {
            return Err(Error::InvalidParameter("m_inner must be at least 1".into()));
        }
        let pools = exec.map_range(samples.len(), |s| {
            let mut rng = stream_rng(seed, PREDICTIVE_STREAM_BASE + s as u64);
            draw_pool(&samples[s], train_y, prior, eta, m_inner, &mut rng)
        });
        let d = train_y.ncols();
        let total = samples.len() * m_inner;
        let mut out = Self {
            d,
            means: Vec::with_capacity(total * d),
            log_norms: Vec::with_capacity(total),
            half_precisions: Vec::with_capacity(total),
            samples: samples.len(),
            m_inner,
        };
        for pool in pools {
            let pool = pool?;
            out.means.extend(pool.means);
            out.log_norms.extend(pool.log_norms);
            out.half_precisions.extend(pool.half_precisions);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_samples(&self) -> usize {
        self.samples
    }

    pub fn m_inner(&self) -> usize {
        self.m_inner
    }

    /// Log predictive density at `y` (standardized units), floored.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: y.len(),
            });
        }
        // Streaming log-sum-exp.
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (k, mean) in self.means.chunks_exact(self.d).enumerate() {
            let dist: f64 = mean.iter().zip(y).map(|(m, v)| (m - v) * (m - v)).sum();
            let l = self.log_norms[k] - dist * self.half_precisions[k];
            if l > max {
                sum = sum * (max - l).exp() + 1.0;
                max = l;
            } else {
                sum += (l - max).exp();
            }
        }
        let value = max + sum.ln() - (self.log_norms.len() as f64).ln();
        Ok(if value.is_finite() {
            value.max(log_density_floor())
        } else {
            log_density_floor()
        })
    }

    /// Log densities at each row of `points`.
    pub fn log_densities(&self, points: &DMatrix<f64>, exec: Execution) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
        exec.map(rows, |r| self.log_density(&r)).into_iter().collect()
    }
}

/// Estimate at a single point; see [`PredictiveDensity`].
#[allow(clippy::too_many_arguments)]
pub fn predictive_log_density(
    y_star: &[f64],
    samples: &[PosteriorSample],
    train_y: &DMatrix<f64>,
    prior: &NiwPrior,
    eta: Concentration,
    m_inner: usize,
    seed: u64,
) -> Result<f64> {
    PredictiveDensity::new(samples, train_y, prior, eta, m_inner, seed, Execution::Sequential)?.log_density(y_star)
}

/// `count` evenly spaced nodes from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) || count < 2 {
            return Err(Error::InvalidParameter(format!(
                "axis needs min < max and at least 2 nodes, got {min}:{max}:{count}"
            )));
        }
        Ok(Self { min, max, count })
    }

    /// Spans `values` widened by `pad` times their range on each side.
    pub fn covering(values: impl IntoIterator<Item = f64>, pad: f64, count: usize) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let range = if hi > lo { hi - lo } else { 1.0 };
        Self::new(lo - pad * range, hi + pad * range, count)
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    /// Parses `min:max:count`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("axis '{s}' is not min:max:count"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let min = parts[0].trim().parse().map_err(|_| bad())?;
        let max = parts[1].trim().parse().map_err(|_| bad())?;
        let count = parts[2].trim().parse().map_err(|_| bad())?;
        Self::new(min, max, count).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Log predictive density on a 2-D grid. Node `(i, j)` sits at
/// `(axes[0].node(i), axes[1].node(j))` and is stored at `i · axes[1].count + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub axes: [Axis; 2],
    pub log_density: Vec<f64>,
    /// Posterior samples used.
    pub m_outer: usize,
    pub m_inner: usize,
    pub seed: u64,
    /// Digest of the configuration that produced the chain, if known.
    pub config_digest: String,
}

#[derive(Serialize)]
struct GridMeta<'a> {
    axes: &'a [Axis; 2],
    m_outer: usize,
    m_inner: usize,
    seed: u64,
    config_digest: &'a str,
    nodes: usize,
}

impl DensityGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.log_density[i * self.axes[1].count + j]
    }

    /// Riemann sum of the density over the grid box.
    pub fn mass(&self) -> f64 {
        let cell = self.axes[0].step() * self.axes[1].step();
        self.log_density.iter().map(|l| l.exp()).sum::<f64>() * cell
    }

    /// Path of the metadata record written next to the CSV at `path`.
    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Writes `x,y,log_density` rows and a JSON metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::InvalidSize(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["x", "y", "log_density"]).map_err(csv_err)?;
        for i in 0..self.axes[0].count {
            for j in 0..self.axes[1].count {
                w.write_record([
                    format!("{:?}", self.axes[0].node(i)),
                    format!("{:?}", self.axes[1].node(j)),
                    format!("{:?}", self.value(i, j)),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let meta = GridMeta {
            axes: &self.axes,
            m_outer: self.m_outer,
            m_inner: self.m_inner,
            seed: self.seed,
            config_digest: &self.config_digest,
            nodes: self.log_density.len(),
        };
        let meta_path = Self::meta_path(path);
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Evaluates `density` on a grid given in original units. `transform` maps
/// original to standardized units; its Jacobian is added so the grid
/// integrates to one in original units.
pub fn density_grid(
    density: &PredictiveDensity,
    axes: [Axis; 2],
    transform: Option<&Standardizer>,
    seed: u64,
    exec: Execution,
) -> Result<DensityGrid> {
    if density.dim() != 2 {
        return Err(Error::UnsupportedDimension(density.dim()));
    }
    let log_jac = transform.map_or(0.0, Standardizer::log_jacobian);
    let (nx, ny) = (axes[0].count, axes[1].count);
    let values = exec.map_range(nx * ny, |k| {
        let p = [axes[0].node(k / ny), axes[1].node(k % ny)];
        let z = transform.map_or_else(|| DVector::from_row_slice(&p), |t| t.apply_point(&p));
        density
            .log_density(z.as_slice())
            .map(|l| (l + log_jac).max(log_density_floor()))
    });
    Ok(DensityGrid {
        axes,
        log_density: values.into_iter().collect::<Result<_>>()?,
        m_outer: density.num_samples(),
        m_inner: density.m_inner(),
        seed,
        config_digest: String::new(),
    })
}
