//! Seed sweeps and the "top half by validation accuracy" summary.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

/// Mean and (population) standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One finished run as seen by the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunScore {
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub runs: usize,
    pub kept: usize,
    pub mean_test: f64,
    pub std_test: f64,
    pub mean_val: f64,
    /// Seeds of the kept runs, best validation first.
    pub kept_seeds: Vec<u64>,
}

/// Keep the `keep` runs with the highest validation accuracy (ties broken by
/// smaller seed) and summarize their test accuracy.
pub fn top_by_validation(scores: &[RunScore], keep: usize) -> SweepSummary {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.val_acc.total_cmp(&a.val_acc).then(a.seed.cmp(&b.seed)));
    sorted.truncate(keep);
    let tests: Vec<f64> = sorted.iter().map(|s| s.test_acc).collect();
    let vals: Vec<f64> = sorted.iter().map(|s| s.val_acc).collect();
    let (mean_test, std_test) = mean_std(&tests);
    SweepSummary {
        runs: scores.len(),
        kept: sorted.len(),
        mean_test,
        std_test,
        mean_val: mean_std(&vals).0,
        kept_seeds: sorted.iter().map(|s| s.seed).collect(),
    }
}

/// Run `f` for every seed in parallel; results keep the input order.
pub fn run_seeds<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_best_validation_half() {
        let scores: Vec<RunScore> = (0..4)
            .map(|s| RunScore {
                seed: s,
                val_acc: [0.5, 0.9, 0.7, 0.9][s as usize],
                test_acc: [0.1, 0.2, 0.3, 0.4][s as usize],
            })
            .collect();
        let sum = top_by_validation(&scores, 2);
        assert_eq!(sum.kept_seeds, vec![1, 3]);
        assert!((sum.mean_test - 0.3).abs() < 1e-15);
        assert!((sum.std_test - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn run_seeds_preserves_order() {
        let out = run_seeds(&[5, 1, 3], |s| Ok(s * 2)).unwrap();
        assert_eq!(out, vec![10, 2, 6]);
    }
}
