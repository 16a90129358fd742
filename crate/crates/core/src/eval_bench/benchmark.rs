//! Cross-validated comparison of iWMM variants against iGMM and KDE.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{igmm_fit, point_assignments, rand_index, thin_evenly, Kde};
use crate::config::RunConfig;
use crate::data::chain::{fit_chain, ChainFile};
use crate::data::{cv_folds, generate, load_csv, load_libsvm, Dataset, Shape, Standardizer};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::predictive::PredictiveDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Two latent dimensions.
    IwmmQ2,
    /// Latent dimension equal to the data dimension.
    IwmmQd,
    /// Two latent dimensions, one Gaussian cluster (no Gibbs sweeps).
    IwmmC1,
    Igmm,
    Kde,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::IwmmQ2 => "iwmm_q2",
            Method::IwmmQd => "iwmm_qd",
            Method::IwmmC1 => "iwmm_c1",
            Method::Igmm => "igmm",
            Method::Kde => "kde",
        }
    }

    /// The run configuration this method uses on data of dimension `d`.
    pub fn configure(self, base: &RunConfig, d: usize) -> RunConfig {
        let mut c = base.clone();
        match self {
            Method::IwmmQ2 => c.latent_dim = 2.min(d),
            Method::IwmmQd => c.latent_dim = d,
            Method::IwmmC1 => {
                c.latent_dim = 2.min(d);
                c.single_cluster = true;
            }
            Method::Igmm | Method::Kde => {}
        }
        c
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iwmm_q2" => Ok(Method::IwmmQ2),
            "iwmm_qd" => Ok(Method::IwmmQd),
            "iwmm_c1" => Ok(Method::IwmmC1),
            "igmm" => Ok(Method::Igmm),
            "kde" => Ok(Method::Kde),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Resolves a benchmark dataset entry: `shape:n` generates data with `seed`;
/// anything else is a path, read as CSV when it ends in `.csv` and as
/// LIBSVM text otherwise.
pub fn parse_dataset_spec(spec: &str, seed: u64) -> Result<Dataset> {
    if let Some((shape, n)) = spec.split_once(':') {
        if let Ok(shape) = shape.parse::<Shape>() {
            let n = n
                .parse()
                .map_err(|_| Error::Config(format!("bad point count in dataset '{spec}'")))?;
            return generate(shape, n, seed);
        }
    }
    if spec.ends_with(".csv") {
        load_csv(spec)
    } else {
        load_libsvm(spec)
    }
}

/// Seed of one (seed, fold) job, mixed with splitmix64.
pub fn job_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub dataset: String,
    pub method: String,
    pub fold: usize,
    /// NaN for KDE (no clustering) and for failed jobs.
    pub rand_index: f64,
    /// Mean nats per held-out point in standardized units; NaN on failure.
    pub test_log_lik: f64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub config_digest: String,
}

/// Scores of a fitted chain on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainScore {
    /// Point-estimate clustering of the training data against its labels.
    pub rand_index: Option<f64>,
    /// Mean log predictive density per test point, standardized units.
    pub test_log_lik: f64,
    /// The same in the test data's original units.
    pub test_log_lik_original: f64,
    pub n_test: usize,
    pub num_samples: usize,
    pub m_inner: usize,
    pub seed: u64,
    pub config_digest: String,
}

fn mean_log_density(
    points: &DMatrix<f64>,
    f: impl Fn(&[f64]) -> Result<f64> + Sync + Send,
    exec: Execution,
) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(Error::InvalidSize("no test points".into()));
    }
    let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
    let values = exec.map(rows, |r| f(&r)).into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn training_rand(labels: Option<&Vec<usize>>, predicted: &[usize]) -> Result<Option<f64>> {
    match labels {
        Some(l) if l.len() >= 2 => Ok(Some(rand_index(predicted, l)?)),
        _ => Ok(None),
    }
}

/// Rand index of the chain's point estimate and mean test log likelihood of
/// `test` (original units; the chain's transform is applied).
pub fn score_chain(chain: &ChainFile, test: &Dataset, exec: Execution) -> Result<ChainScore> {
    let h = &chain.header;
    let config = &h.config;
    if test.dim() != h.d {
        return Err(Error::DimensionMismatch {
            expected: h.d,
            found: test.dim(),
        });
    }
    let samples = thin_evenly(&chain.samples, config.max_predictive_samples);
    let q = samples.first().ok_or(Error::EmptyChain)?.x.ncols();
    let train = h.train();
    let density = PredictiveDensity::new(
        &samples,
        &train.y,
        &config.niw_prior(q)?,
        config.concentration()?,
        config.m_inner,
        config.seed,
        exec,
    )?;
    let test_y = h.transform.apply(&test.y);
    let ll = mean_log_density(&test_y, |y| density.log_density(y), exec)?;
    let point = point_assignments(&chain.samples, config.point_estimate)?;
    Ok(ChainScore {
        rand_index: training_rand(train.labels.as_ref(), point.labels())?,
        test_log_lik: ll,
        test_log_lik_original: ll + h.transform.log_jacobian(),
        n_test: test.len(),
        num_samples: samples.len(),
        m_inner: config.m_inner,
        seed: config.seed,
        config_digest: h.config_digest.clone(),
    })
}

/// `(rand_index, test_log_lik)` of one method on one split.
fn evaluate(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    config: &RunConfig,
    exec: Execution,
) -> Result<(f64, f64)> {
    match method {
        Method::IwmmQ2 | Method::IwmmQd | Method::IwmmC1 => {
            let chain = fit_chain(train, config)?;
            let s = score_chain(&chain, test, exec)?;
            Ok((s.rand_index.unwrap_or(f64::NAN), s.test_log_lik))
        }
        Method::Igmm | Method::Kde => {
            let (train_s, transform) = if config.standardize {
                crate::data::standardize(train)?
            } else {
                (train.clone(), Standardizer::identity(train.dim()))
            };
            let test_y = transform.apply(&test.y);
            if method == Method::Kde {
                let kde = Kde::fit(train_s.y)?;
                let ll = mean_log_density(&test_y, |y| Ok(kde.log_density(y)), exec)?;
                return Ok((f64::NAN, ll));
            }
            let fit = igmm_fit(&train_s.y, config)?;
            let ll = mean_log_density(&test_y, |y| fit.log_density(y), exec)?;
            let point = fit.point_estimate(config.point_estimate)?;
            let rand = training_rand(train.labels.as_ref(), point.labels())?.unwrap_or(f64::NAN);
            Ok((rand, ll))
        }
    }
}

struct Job {
    dataset: usize,
    seed: u64,
    fold: usize,
    method: Method,
}

/// Runs every (dataset, seed, fold, method) combination in `config`. A job
/// that fails is logged and reported with NaN scores; the run continues.
/// Rows come out in (dataset, seed, fold, method) order regardless of `exec`.
pub fn benchmark(config: &RunConfig, exec: Execution) -> Result<Vec<BenchmarkRow>> {
    let methods = config
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>>>()?;
    if config.seeds.is_empty() || config.datasets.is_empty() || methods.is_empty() {
        return Err(Error::Config("benchmark needs datasets, methods and seeds".into()));
    }
    let digest = config.digest();
    // Per (dataset, seed): the data and its folds.
    let mut splits = Vec::new();
    let mut jobs = Vec::new();
    for spec in &config.datasets {
        for &seed in &config.seeds {
            let data = parse_dataset_spec(spec, seed)?;
            let folds = cv_folds(data.len(), config.folds, seed)?;
            for fold in 0..folds.k {
                for &method in &methods {
                    jobs.push(Job {
                        dataset: splits.len(),
                        seed,
                        fold,
                        method,
                    });
                }
            }
            splits.push((data, folds));
        }
    }
    let rows = exec.map(jobs, |job| {
        let (data, folds) = &splits[job.dataset];
        let train = data.subset(&folds.train_indices(job.fold));
        let test = data.subset(&folds.test_indices(job.fold));
        let mut job_config = job.method.configure(config, data.dim());
        job_config.seed = job_seed(job.seed, job.fold);
        let start = Instant::now();
        let result = evaluate(job.method, &train, &test, &job_config, exec);
        let wall_time_s = start.elapsed().as_secs_f64();
        let (rand_index, test_log_lik) = result.unwrap_or_else(|e| {
            log::warn!("{} {} seed {} fold {} failed: {e}", data.name, job.method, job.seed, job.fold);
            (f64::NAN, f64::NAN)
        });
        log::info!(
            "dataset={} method={} seed={} fold={} rand={rand_index:.4} test_ll={test_log_lik:.4} time={wall_time_s:.2}s",
            data.name,
            job.method,
            job.seed,
            job.fold
        );
        BenchmarkRow {
            dataset: data.name.clone(),
            method: job.method.name().into(),
            fold: job.fold,
            rand_index,
            test_log_lik,
            wall_time_s,
            seed: job.seed,
            config_digest: digest.clone(),
        }
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    /// Jobs with a finite test log likelihood.
    pub n_ok: usize,
    pub n_failed: usize,
    pub rand_index_mean: f64,
    pub rand_index_stderr: f64,
    pub test_log_lik_mean: f64,
    pub test_log_lik_stderr: f64,
    pub wall_time_s_mean: f64,
}

/// Mean and standard error of the finite entries (NaN when there are none;
/// the error is NaN with fewer than two).
fn mean_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row per (dataset, method), in order of first appearance, over all
/// seeds and folds.
pub fn aggregate(rows: &[BenchmarkRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.dataset.clone(), r.method.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(dataset, method)| {
            let group: Vec<&BenchmarkRow> = rows
                .iter()
                .filter(|r| r.dataset == dataset && r.method == method)
                .collect();
            let n_ok = group.iter().filter(|r| r.test_log_lik.is_finite()).count();
            let (rand_index_mean, rand_index_stderr) = mean_stderr(group.iter().map(|r| r.rand_index));
            let (test_log_lik_mean, test_log_lik_stderr) = mean_stderr(group.iter().map(|r| r.test_log_lik));
            let wall_time_s_mean = group.iter().map(|r| r.wall_time_s).sum::<f64>() / group.len() as f64;
            AggregateRow {
                dataset,
                method,
                n_ok,
                n_failed: group.len() - n_ok,
                rand_index_mean,
                rand_index_stderr,
                test_log_lik_mean,
                test_log_lik_stderr,
                wall_time_s_mean,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::InvalidSize(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `dataset,method,fold,rand_index,test_log_lik,wall_time_s,seed,config_digest`.
pub fn write_report_csv(rows: &[BenchmarkRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, path.as_ref())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, path.as_ref())
}
