//! Clustering and density-estimation evaluation: Rand index, point
//! estimates, the KDE and iGMM baselines, and the cross-validated benchmark.

mod benchmark;
mod igmm;
mod kde;

use std::collections::HashMap;

use crate::config::PointEstimate;
use crate::error::{Error, Result};
use crate::latent_mixture::Assignments;
use crate::sampler::PosteriorSample;

pub use benchmark::{
    aggregate, benchmark, job_seed, parse_dataset_spec, score_chain, write_aggregate_csv, write_report_csv,
    AggregateRow, BenchmarkRow, ChainScore, Method,
};
pub use igmm::{igmm_fit, IgmmFit};
pub use kde::Kde;

/// Fraction of point pairs on which two partitions agree (both together or
/// both apart).
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidSize(format!("Rand index needs N ≥ 2, got {n}")));
    }
    let pairs = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let together_both: f64 = joint.values().map(|&k| pairs(k)).sum();
    let together_a: f64 = rows.values().map(|&k| pairs(k)).sum();
    let together_b: f64 = cols.values().map(|&k| pairs(k)).sum();
    let total = pairs(n);
    let agree = total - together_a - together_b + 2.0 * together_both;
    Ok(agree / total)
}

/// The retained sample chosen to report a clustering. For `MaxJoint`, ties
/// go to the earliest sample.
pub fn select_point_estimate(samples: &[PosteriorSample], rule: PointEstimate) -> Result<&PosteriorSample> {
    let last = samples.last().ok_or(Error::EmptyChain)?;
    Ok(match rule {
        PointEstimate::Last => last,
        PointEstimate::MaxJoint => samples.iter().fold(&samples[0], |best, s| {
            if s.joint_log_prob > best.joint_log_prob {
                s
            } else {
                best
            }
        }),
    })
}

/// At most `max` samples, evenly spaced and including the last one; `0`
/// keeps everything.
pub fn thin_evenly<T: Clone>(samples: &[T], max: usize) -> Vec<T> {
    let n = samples.len();
    if max == 0 || n <= max {
        return samples.to_vec();
    }
    (0..max)
        .map(|k| samples[n - 1 - (max - 1 - k) * n / max].clone())
        .collect()
}

/// Point-estimate assignments of a chain.
pub fn point_assignments(samples: &[PosteriorSample], rule: PointEstimate) -> Result<Assignments> {
    Ok(select_point_estimate(samples, rule)?.assignments.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use nalgebra::DMatrix;

    fn brute_force_rand(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0;
        let mut total = 0;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert_eq!(rand_index(&[0, 1], &[0, 0]).unwrap(), 0.0);
        assert!(matches!(rand_index(&[0, 1], &[0]), Err(Error::LengthMismatch(2, 1))));
        let a = [0, 0, 1, 2, 2, 2, 1, 0, 3];
        let b = [1, 0, 1, 1, 2, 2, 0, 0, 0];
        assert!((rand_index(&a, &b).unwrap() - brute_force_rand(&a, &b)).abs() < 1e-15);
    }

    fn sample(joint: f64, iteration: usize) -> PosteriorSample {
        PosteriorSample {
            x: DMatrix::zeros(2, 1),
            assignments: Assignments::from_labels(&[0, iteration % 2]),
            params: KernelParams::default(),
            joint_log_prob: joint,
            iteration,
        }
    }

    #[test]
    fn point_estimate_rules() {
        assert!(matches!(
            select_point_estimate(&[], PointEstimate::MaxJoint),
            Err(Error::EmptyChain)
        ));
        let s = vec![sample(-3.0, 0), sample(-1.0, 1), sample(-1.0, 2), sample(-2.0, 3)];
        assert_eq!(select_point_estimate(&s, PointEstimate::MaxJoint).unwrap().iteration, 1);
        assert_eq!(select_point_estimate(&s, PointEstimate::Last).unwrap().iteration, 3);
    }

    #[test]
    fn thinning_keeps_last() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(thin_evenly(&v, 0), v);
        assert_eq!(thin_evenly(&v, 20), v);
        assert_eq!(thin_evenly(&v, 5), vec![1, 3, 5, 7, 9]);
        assert_eq!(thin_evenly(&v, 1), vec![9]);
    }
}
