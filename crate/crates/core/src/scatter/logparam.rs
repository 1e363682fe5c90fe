//! Parametric log transform `log(u + k)` and the mean/median rule for `k`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};

/// Result of a log-parameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogParamChoice {
    pub k: f64,
    /// `|mean − median|` of the transformed samples at `k`.
    pub objective: f64,
    /// All samples were equal, so every candidate scored zero.
    pub degenerate: bool,
}

/// `count` logarithmically spaced candidates in `[min, max]`.
pub fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && min.is_finite() && max.is_finite()) || count == 0 {
        return Err(ShdlError::Parameter(format!(
            "invalid log grid [{min}, {max}] x {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.ln(), max.ln());
    Ok((0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(ShdlError::Parameter(format!(
            "log parameter must be positive and finite, got {k}"
        )))
    }
}

/// Elementwise `ln(value + k)`.
pub fn apply_log(values: &Array2<f64>, k: f64) -> Result<Array2<f64>> {
    check_k(k)?;
    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(ShdlError::Validation(
            "log transform expects finite non-negative values".into(),
        ));
    }
    Ok(values.mapv(|v| (v + k).ln()))
}

/// `|mean − median|` of a sample set.
pub fn mean_median_gap(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    (mean - median_of_sorted(&sorted)).abs()
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Picks the grid value minimising `|mean(log(s + k)) − median(log(s + k))|`.
///
/// Ties go to the smaller `k`. Constant samples return the smallest
/// candidate with `degenerate` set.
pub fn select_log_parameter(samples: &[f64], grid: &[f64]) -> Result<LogParamChoice> {
    if samples.is_empty() {
        return Err(ShdlError::Validation("no samples for log-parameter selection".into()));
    }
    if samples.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(ShdlError::Validation(
            "log-parameter samples must be finite and non-negative".into(),
        ));
    }
    if grid.is_empty() {
        return Err(ShdlError::Parameter("empty log-parameter grid".into()));
    }
    for &k in grid {
        check_k(k)?;
    }
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(LogParamChoice {
            k: candidates[0],
            objective: 0.0,
            degenerate: true,
        });
    }

    let n = sorted.len();
    let mut best: Option<LogParamChoice> = None;
    for k in candidates {
        let mean = sorted.iter().map(|v| (v + k).ln()).sum::<f64>() / n as f64;
        // log is monotone, so the order statistics carry over.
        let median = if n % 2 == 1 {
            (sorted[n / 2] + k).ln()
        } else {
            0.5 * ((sorted[n / 2 - 1] + k).ln() + (sorted[n / 2] + k).ln())
        };
        let objective = (mean - median).abs();
        if best.is_none_or(|b| objective < b.objective) {
            best = Some(LogParamChoice {
                k,
                objective,
                degenerate: false,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_gap(samples: &[f64], k: f64) -> f64 {
        let logged: Vec<f64> = samples.iter().map(|v| (v + k).ln()).collect();
        mean_median_gap(&logged)
    }

    #[test]
    fn log_of_zero_plus_one() {
        let v = Array2::zeros((2, 2));
        assert!(apply_log(&v, 1.0).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_positive_k_is_rejected() {
        let v = Array2::zeros((2, 2));
        assert!(matches!(apply_log(&v, 0.0), Err(ShdlError::Parameter(_))));
        assert!(matches!(apply_log(&v, -1.0), Err(ShdlError::Parameter(_))));
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let grid = log_grid(0.01, 20.0, 50).unwrap();
        let c = select_log_parameter(&[5.0, 5.0, 5.0], &grid).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.k, grid[0]);
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = log_grid(0.01, 20.0, 50).unwrap();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[49] - 20.0).abs() < 1e-12);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-9));
    }

    #[test]
    fn selection_attains_brute_force_minimum() {
        let grid = log_grid(0.01, 20.0, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            // Right-skewed: squared/exp-distributed magnitudes.
            let n = 200 + trial * 13;
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random::<f64>().max(1e-12);
                    (-u.ln()).powf(1.0 + trial as f64 * 0.1) * 0.3
                })
                .collect();
            let choice = select_log_parameter(&samples, &grid).unwrap();
            let scan: Vec<f64> = grid.iter().map(|&k| brute_force_gap(&samples, k)).collect();
            let min = scan.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((choice.objective - min).abs() < 1e-12);
            for (&k, &gap) in grid.iter().zip(&scan) {
                assert!(choice.objective <= gap + 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn log_is_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a: f64 = rng.random::<f64>() * 10.0;
            let b: f64 = a + rng.random::<f64>() * 5.0 + 1e-9;
            let k = rng.random::<f64>() * 5.0 + 0.01;
            let m = Array2::from_shape_vec((1, 2), vec![a, b]).unwrap();
            let out = apply_log(&m, k).unwrap();
            assert!(out[[0, 0]] < out[[0, 1]]);
        }
    }
}
