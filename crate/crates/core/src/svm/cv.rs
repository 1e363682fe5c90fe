//! Stratified k-fold cross-validation.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::ols::Normalizer;
use crate::par;

use super::{accuracy, SvmModel, SvmParams};

/// Fold assignment settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValidator {
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for CrossValidator {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            stratified: true,
        }
    }
}

impl CrossValidator {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self {
            folds,
            seed,
            stratified: true,
        }
    }

    /// Validation indices of each fold, ascending within a fold.
    ///
    /// Each class is shuffled and dealt round-robin, continuing where the
    /// previous class stopped, so fold sizes differ by at most one.
    pub fn split(&self, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
        if self.folds < 2 {
            return Err(ShdlError::Protocol(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.folds
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut folds = vec![Vec::new(); self.folds];
        let mut next = 0usize;
        if self.stratified {
            let mut classes = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            for class in classes {
                let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
                if members.len() < self.folds {
                    return Err(ShdlError::Protocol(format!(
                        "class {class} has {} samples, fewer than {} folds",
                        members.len(),
                        self.folds
                    )));
                }
                members.shuffle(&mut rng);
                for i in members {
                    folds[next].push(i);
                    next = (next + 1) % self.folds;
                }
            }
        } else {
            if labels.len() < self.folds {
                return Err(ShdlError::Protocol(format!(
                    "{} samples, fewer than {} folds",
                    labels.len(),
                    self.folds
                )));
            }
            let mut all: Vec<usize> = (0..labels.len()).collect();
            all.shuffle(&mut rng);
            for i in all {
                folds[next].push(i);
                next = (next + 1) % self.folds;
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(folds)
    }
}

/// Per-fold and mean validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Cross-validated accuracy; normalization is fitted on each training fold.
pub fn cross_validate(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    params: &SvmParams,
    cv: &CrossValidator,
) -> Result<CvReport> {
    if labels.len() != x.nrows() {
        return Err(ShdlError::Dimension(format!(
            "{} labels for {} rows",
            labels.len(),
            x.nrows()
        )));
    }
    let folds = cv.split(labels)?;
    let n = labels.len();
    let fold_accuracies = par::try_map(&folds, |val| {
        let mut in_val = vec![false; n];
        for &i in val {
            in_val[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
        let xt = x.select(Axis(0), &train);
        let norm = Normalizer::fit(xt.view())?;
        let xt = norm.transform(xt.view())?;
        let xv = norm.transform(x.select(Axis(0), val).view())?;
        let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let yv: Vec<usize> = val.iter().map(|&i| labels[i]).collect();
        let (model, _) = SvmModel::train(xt.view(), &yt, params)?;
        let pred = model.predict(xv.view())?;
        Ok::<_, ShdlError>(accuracy(&pred.labels, &yv))
    })?;
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    Ok(CvReport {
        fold_accuracies,
        mean_accuracy,
    })
}

/// One evaluated hyperparameter pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub gamma_scale: f64,
    pub mean_accuracy: f64,
}

/// Exhaustive search over `C` and kernel-width multipliers.
///
/// Returns the best parameters (first maximum in scan order) and the scan.
pub fn grid_search(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    base: &SvmParams,
    c_grid: &[f64],
    gamma_scales: &[f64],
    cv: &CrossValidator,
) -> Result<(SvmParams, Vec<GridPoint>)> {
    if c_grid.is_empty() || gamma_scales.is_empty() {
        return Err(ShdlError::Parameter("empty SVM grid".into()));
    }
    let mut scan = Vec::new();
    let mut best: Option<(SvmParams, f64)> = None;
    for &c in c_grid {
        for &g in gamma_scales {
            let params = SvmParams {
                c,
                gamma_scale: g,
                ..base.clone()
            };
            let r = cross_validate(x, labels, &params, cv)?;
            scan.push(GridPoint {
                c,
                gamma_scale: g,
                mean_accuracy: r.mean_accuracy,
            });
            if best.as_ref().is_none_or(|(_, a)| r.mean_accuracy > *a) {
                best = Some((params, r.mean_accuracy));
            }
        }
    }
    Ok((best.expect("non-empty grid").0, scan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..103).map(|i| i % 3).collect();
        let folds = CrossValidator::new(5, 9).split(&labels).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        for class in 0..3 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1);
        }
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn small_class_is_named() {
        let labels = vec![0, 0, 0, 0, 0, 7, 7];
        match CrossValidator::default().split(&labels) {
            Err(ShdlError::Protocol(m)) => assert!(m.contains("class 7")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separable_data_scores_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let base = if i % 2 == 0 { 0.0 } else { 4.0 };
            base + rng.random::<f64>() * 0.5 + j as f64 * 0.0
        });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let r = cross_validate(x.view(), &labels, &SvmParams::default(), &CrossValidator::default()).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.fold_accuracies.len(), 5);
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 500;
        let x = Array2::from_shape_fn((n, 5), |_| rng.random::<f64>());
        let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        let r = cross_validate(x.view(), &labels, &SvmParams::default(), &CrossValidator::default()).unwrap();
        assert!((r.mean_accuracy - 0.5).abs() <= 0.1, "{}", r.mean_accuracy);
    }

    #[test]
    fn grid_search_returns_scan_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        let labels: Vec<usize> = (0..n).map(|i| usize::from(x[[i, 0]] > 0.5)).collect();
        let (best, scan) = grid_search(
            x.view(),
            &labels,
            &SvmParams::default(),
            &[1.0, 10.0, 100.0],
            &[0.5, 1.0, 2.0],
            &CrossValidator::default(),
        )
        .unwrap();
        assert_eq!(scan.len(), 9);
        let top = scan.iter().map(|p| p.mean_accuracy).fold(0.0, f64::max);
        let chosen = scan.iter().find(|p| p.c == best.c && p.gamma_scale == best.gamma_scale).unwrap();
        assert_eq!(chosen.mean_accuracy, top);
    }
}
