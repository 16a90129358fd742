//! Line-delimited JSON chain files: one header record, then one record per
//! retained sample.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{standardize, Dataset, Standardizer};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gp::{rows_of, KernelParams};
use crate::latent_mixture::Assignments;
use crate::sampler::{run_chain, ChainDiagnostics, PosteriorSample};

pub const FORMAT: &str = "iwmm-chain";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub dataset_name: String,
    /// Training observations after standardization, row-major.
    pub train_y: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub labels: Option<Vec<usize>>,
    pub transform: Standardizer,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRecord {
    iteration: usize,
    q: usize,
    /// Latent coordinates, row-major.
    x: Vec<f64>,
    z: Vec<usize>,
    log_theta: [f64; 3],
    joint_log_prob: f64,
}

/// A fitted chain together with what is needed to predict from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub header: ChainHeader,
    pub samples: Vec<PosteriorSample>,
}

impl ChainHeader {
    pub fn new(config: &RunConfig, train: &Dataset, transform: Standardizer, diagnostics: ChainDiagnostics) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            seed: config.seed,
            config_digest: config.digest(),
            config: config.clone(),
            dataset_name: train.name.clone(),
            train_y: rows_of(&train.y),
            n: train.len(),
            d: train.dim(),
            labels: train.labels.clone(),
            transform,
            diagnostics,
        }
    }

    /// The standardized training data stored in the header.
    pub fn train(&self) -> Dataset {
        Dataset {
            y: DMatrix::from_row_slice(self.n, self.d, &self.train_y),
            labels: self.labels.clone(),
            name: self.dataset_name.clone(),
        }
    }
}

/// Standardizes `dataset` (unless disabled) and runs the sampler on it.
pub fn fit_chain(dataset: &Dataset, config: &RunConfig) -> Result<ChainFile> {
    let (train, transform) = if config.standardize {
        standardize(dataset)?
    } else {
        (dataset.clone(), Standardizer::identity(dataset.dim()))
    };
    let run = run_chain(&train.y, &config.chain_config(train.dim())?)?;
    Ok(ChainFile {
        header: ChainHeader::new(config, &train, transform, run.diagnostics),
        samples: run.samples,
    })
}

impl ChainFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w).map_err(io)?;
        for s in &self.samples {
            let rec = SampleRecord {
                iteration: s.iteration,
                q: s.x.ncols(),
                x: rows_of(&s.x),
                z: s.assignments.labels().to_vec(),
                log_theta: s.params.to_array(),
                joint_log_prob: s.joint_log_prob,
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header_line = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(1, 1, "empty chain file")),
        };
        let header: ChainHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::parse(1, e.column(), e.to_string()))?;
        if header.format != FORMAT || header.version != FORMAT_VERSION {
            return Err(Error::parse(
                1,
                1,
                format!("unsupported chain format {} v{}", header.format, header.version),
            ));
        }
        if header.train_y.len() != header.n * header.d {
            return Err(Error::parse(1, 1, "training data size does not match n × d"));
        }
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.column(), e.to_string()))?;
            if rec.z.len() != header.n || rec.x.len() != header.n * rec.q {
                return Err(Error::parse(i + 1, 1, "sample size does not match the header"));
            }
            samples.push(PosteriorSample {
                x: DMatrix::from_row_slice(header.n, rec.q, &rec.x),
                assignments: Assignments::from_ids(&rec.z).map_err(|e| Error::parse(i + 1, 1, e.to_string()))?,
                params: KernelParams::from_array(rec.log_theta),
                joint_log_prob: rec.joint_log_prob,
                iteration: rec.iteration,
            });
        }
        Ok(Self { header, samples })
    }
}
