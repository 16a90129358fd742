//! Datasets: synthetic generators, text loaders, standardization,
//! cross-validation folds, and chain persistence.

pub mod chain;
mod generate;
mod text;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::stream_rng;

pub use generate::{generate, generate_with, GeneratorParams, Shape};
pub use text::{load_csv, load_libsvm, parse_libsvm, save_csv, save_libsvm};

/// Observations with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub name: String,
}

impl Dataset {
    /// Checks for NaNs and relabels to contiguous ids from 0.
    pub fn new(y: DMatrix<f64>, labels: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSize("observations contain non-finite values".into()));
        }
        let labels = match labels {
            Some(l) if l.len() != y.nrows() => return Err(Error::LengthMismatch(l.len(), y.nrows())),
            Some(l) => Some(contiguous_labels(&l)),
            None => None,
        };
        Ok(Self {
            y,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Rows at `indices`, labels kept as they are (not relabeled).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let y = DMatrix::from_fn(indices.len(), self.dim(), |i, j| self.y[(indices[i], j)]);
        Self {
            y,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            name: self.name.clone(),
        }
    }
}

/// Sorted-order remap of arbitrary labels onto `0..C`.
fn contiguous_labels(labels: &[usize]) -> Vec<usize> {
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("present"))
        .collect()
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and sample standard deviations; constant columns get
    /// scale 1 so they are only shifted.
    pub fn fit(y: &DMatrix<f64>) -> Result<Self> {
        let n = y.nrows();
        if n < 2 {
            return Err(Error::InvalidSize(format!("standardization needs N ≥ 2, got {n}")));
        }
        let mut mean = Vec::with_capacity(y.ncols());
        let mut scale = Vec::with_capacity(y.ncols());
        for col in y.column_iter() {
            let m = col.mean();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    /// The map that changes nothing.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| (y[(i, j)] - self.mean[j]) / self.scale[j])
    }

    pub fn apply_point(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_fn(y.len(), |j, _| (y[j] - self.mean[j]) / self.scale[j])
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * self.scale[j] + self.mean[j])
    }

    /// `ln |∂z/∂y|`, added to a standardized-space log density to get one in
    /// original units.
    pub fn log_jacobian(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Standardizes a dataset, returning the map so it can be applied to test
/// points or undone.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, Standardizer)> {
    let t = Standardizer::fit(&dataset.y)?;
    let out = Dataset {
        y: t.apply(&dataset.y),
        labels: dataset.labels.clone(),
        name: dataset.name.clone(),
    };
    Ok((out, t))
}

/// A random partition of `0..n` into `k` folds whose sizes differ by at most 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldSpec {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

pub fn cv_folds(n: usize, k: usize, seed: u64) -> Result<FoldSpec> {
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldSpec { k, assignments })
}
