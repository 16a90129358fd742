//! Isotropic Gaussian kernel density estimate with a leave-one-out bandwidth.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

/// Grid points scanned before the golden-section refinement.
const SCAN_POINTS: usize = 64;

#[derive(Debug, Clone)]
pub struct Kde {
    points: DMatrix<f64>,
    bandwidth: f64,
}

fn sq_distances(y: &DMatrix<f64>) -> Vec<f64> {
    let n = y.nrows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (y.row(i) - y.row(j)).norm_squared();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

fn loo_from_distances(sq: &[f64], n: usize, d: usize, log_h: f64) -> f64 {
    let h2 = (2.0 * log_h).exp();
    let log_norm = -0.5 * d as f64 * (2.0 * PI * h2).ln() - ((n - 1) as f64).ln();
    let mut terms = Vec::with_capacity(n - 1);
    (0..n)
        .map(|i| {
            terms.clear();
            terms.extend((0..n).filter(|&j| j != i).map(|j| -sq[i * n + j] / (2.0 * h2)));
            log_norm + log_sum_exp(&terms)
        })
        .sum()
}

impl Kde {
    /// Uses a given bandwidth.
    pub fn with_bandwidth(points: DMatrix<f64>, bandwidth: f64) -> Result<Self> {
        if points.nrows() == 0 || !(bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "KDE needs points and a positive bandwidth, got {} points and h = {bandwidth}",
                points.nrows()
            )));
        }
        Ok(Self { points, bandwidth })
    }

    /// Chooses the bandwidth maximizing the leave-one-out log likelihood:
    /// a log-spaced scan followed by golden-section search around the best
    /// scanned value.
    pub fn fit(points: DMatrix<f64>) -> Result<Self> {
        let (n, d) = points.shape();
        if n < 2 {
            return Err(Error::InvalidSize(format!("KDE fitting needs N ≥ 2, got {n}")));
        }
        let sq = sq_distances(&points);
        let positive = sq.iter().copied().filter(|&v| v > 0.0);
        let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi == 0.0 {
            return Err(Error::DegenerateData);
        }
        let objective = |log_h: f64| loo_from_distances(&sq, n, d, log_h);
        let (a, b) = (0.5 * lo.ln() - 3.0, 0.5 * hi.ln() + 1.0);
        let step = (b - a) / (SCAN_POINTS - 1) as f64;
        let best = (0..SCAN_POINTS)
            .map(|k| (k, objective(a + k as f64 * step)))
            .fold(
                (0, f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            )
            .0;
        let log_h = golden_section_max(
            objective,
            a + best.saturating_sub(1) as f64 * step,
            a + (best + 1) as f64 * step,
            1e-8,
        );
        Self::with_bandwidth(points, log_h.exp())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Leave-one-out log likelihood of `points` at bandwidth `exp(log_h)`.
    pub fn loo_objective(points: &DMatrix<f64>, log_h: f64) -> f64 {
        let (n, d) = points.shape();
        loo_from_distances(&sq_distances(points), n, d, log_h)
    }

    /// `ln (1/N) Σ_m N(y | y_m, h² I)`.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let (n, d) = self.points.shape();
        let h2 = self.bandwidth * self.bandwidth;
        let terms: Vec<f64> = self
            .points
            .row_iter()
            .map(|row| -row.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * h2))
            .collect();
        log_sum_exp(&terms) - 0.5 * d as f64 * (2.0 * PI * h2).ln() - (n as f64).ln()
    }
}

/// Maximizer of a unimodal `f` on `[a, b]` to width `tol`.
fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
