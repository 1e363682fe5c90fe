//! Gaussian-kernel SVM trained by SMO, one-vs-all over classes.

mod cv;
mod kernel;
mod smo;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::par;

pub use cv::{cross_validate, grid_search, CrossValidator, CvReport, GridPoint};
pub use kernel::{gaussian, gram_matrix, kernel_matrix, CachedKernel, DenseKernel, KernelRows};
pub use smo::{dual_objective, kkt_violation, solve_binary, BinarySolution};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// Fixed kernel width; when absent, `gamma_scale / (dim * variance)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub gamma_scale: f64,
    pub tol: f64,
    /// Kernel memory budget; a full Gram matrix is used when it fits.
    pub cache_mb: usize,
    /// SMO iteration cap per binary problem; 0 selects `max(1e6, 100 n)`.
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            gamma: None,
            gamma_scale: 1.0,
            tol: 1e-3,
            cache_mb: 512,
            max_iter: 0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ShdlError::Parameter(format!("C must be positive, got {}", self.c)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ShdlError::Parameter(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.gamma_scale > 0.0 && self.gamma_scale.is_finite()) {
            return Err(ShdlError::Parameter("gamma_scale must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(ShdlError::Parameter("tol must be positive".into()));
        }
        Ok(())
    }

    /// Kernel width used for a training table.
    pub fn resolve_gamma(&self, x: ArrayView2<'_, f64>) -> f64 {
        if let Some(g) = self.gamma {
            return g;
        }
        let d = x.ncols().max(1) as f64;
        let n = x.len().max(1) as f64;
        let mean = x.sum() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let var = if var > 0.0 { var } else { 1.0 };
        self.gamma_scale / (d * var)
    }
}

/// Diagnostics of one binary problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub class: usize,
    pub iterations: usize,
    pub support_vectors: usize,
    pub bounded: usize,
    pub kkt_violation: f64,
    /// `|Σ α_i y_i|`.
    pub equality_residual: f64,
}

/// Diagnostics of a one-vs-all training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SvmTrainReport {
    pub problems: Vec<BinaryReport>,
    pub dense_kernel: bool,
}

impl SvmTrainReport {
    pub fn max_kkt_violation(&self) -> f64 {
        self.problems.iter().map(|p| p.kkt_violation).fold(0.0, f64::max)
    }
}

/// One-vs-all Gaussian SVM. Support vectors are pooled across classes;
/// `coefficients[c][s]` is `α_s y_s` of class `c` (zero when unused).
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<usize>,
    pub gamma: f64,
    pub c: f64,
    pub support: Array2<f64>,
    pub coefficients: Array2<f64>,
    pub biases: Vec<f64>,
}

/// Multiclass predictions with per-class decision values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub decisions: Array2<f64>,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    /// Trains one binary problem per class present in `labels`.
    pub fn train(x: ArrayView2<'_, f64>, labels: &[usize], params: &SvmParams) -> Result<(Self, SvmTrainReport)> {
        params.validate()?;
        let n = x.nrows();
        if labels.len() != n {
            return Err(ShdlError::Dimension(format!("{} labels for {n} rows", labels.len())));
        }
        if x.ncols() == 0 {
            return Err(ShdlError::Dimension("zero-dimensional features".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ShdlError::Validation("non-finite feature value".into()));
        }
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(ShdlError::Protocol(format!(
                "SVM training needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let gamma = params.resolve_gamma(x);
        let max_iter = if params.max_iter == 0 {
            1_000_000usize.max(100 * n)
        } else {
            params.max_iter
        };
        let budget = params.cache_mb.saturating_mul(1 << 20);
        let dense = n.saturating_mul(n).saturating_mul(8) <= budget;

        let shared = if dense {
            Some(DenseKernel::new(&gram_matrix(x, gamma)))
        } else {
            None
        };
        let x_shared = Arc::new(x.to_owned());
        let rows_per_class = (budget / (8 * n.max(1)) / classes.len()).max(2);

        let solutions = par::try_map(&classes, |&class| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let (sol, kkt) = match &shared {
                Some(k) => {
                    let mut k = k.clone();
                    let sol = solve_binary(&mut k, &y, params.c, params.tol, max_iter)?;
                    let kkt = kkt_violation(&mut k, &y, &sol, params.c);
                    (sol, kkt)
                }
                None => {
                    let mut k = CachedKernel::new(Arc::clone(&x_shared), gamma, rows_per_class);
                    let sol = solve_binary(&mut k, &y, params.c, params.tol, max_iter)?;
                    let kkt = kkt_violation(&mut k, &y, &sol, params.c);
                    (sol, kkt)
                }
            };
            if kkt > params.tol {
                log::warn!("class {class}: KKT violation {kkt:.3e} above tolerance");
            }
            let report = BinaryReport {
                class,
                iterations: sol.iterations,
                support_vectors: sol.alpha.iter().filter(|&&a| a > 0.0).count(),
                bounded: sol.alpha.iter().filter(|&&a| a >= params.c).count(),
                kkt_violation: kkt,
                equality_residual: sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum::<f64>().abs(),
            };
            Ok::<_, ShdlError>((y, sol, report))
        })?;

        let pool: Vec<usize> = (0..n)
            .filter(|&i| solutions.iter().any(|(_, s, _)| s.alpha[i] > 0.0))
            .collect();
        let support = x.select(Axis(0), &pool);
        let mut coefficients = Array2::zeros((classes.len(), pool.len()));
        for (ci, (y, sol, _)) in solutions.iter().enumerate() {
            for (si, &i) in pool.iter().enumerate() {
                coefficients[[ci, si]] = sol.alpha[i] * y[i];
            }
        }
        let biases = solutions.iter().map(|(_, s, _)| s.bias).collect();
        let report = SvmTrainReport {
            problems: solutions.into_iter().map(|(_, _, r)| r).collect(),
            dense_kernel: dense,
        };
        Ok((
            Self {
                classes,
                gamma,
                c: params.c,
                support,
                coefficients,
                biases,
            },
            report,
        ))
    }

    /// Per-class decision values, shape `rows x classes`.
    pub fn decision_values(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(ShdlError::Dimension(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ShdlError::Validation("non-finite feature value".into()));
        }
        const BLOCK: usize = 2048;
        let blocks: Vec<usize> = (0..x.nrows()).step_by(BLOCK).collect();
        let parts = par::map(&blocks, |&start| {
            let end = (start + BLOCK).min(x.nrows());
            let k = kernel_matrix(x.slice(ndarray::s![start..end, ..]), self.support.view(), self.gamma);
            let mut d = k.dot(&self.coefficients.t());
            for mut row in d.rows_mut() {
                for (v, b) in row.iter_mut().zip(&self.biases) {
                    *v += b;
                }
            }
            d
        });
        let mut out = Array2::zeros((x.nrows(), self.classes.len()));
        for (&start, part) in blocks.iter().zip(parts) {
            out.slice_mut(ndarray::s![start..start + part.nrows(), ..]).assign(&part);
        }
        Ok(out)
    }

    /// Labels by maximal decision value, ties toward the lower class index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Prediction> {
        let decisions = self.decision_values(x)?;
        let labels = decisions
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                self.classes[best]
            })
            .collect();
        Ok(Prediction { labels, decisions })
    }

    /// Rounds every stored parameter to `f32` precision.
    pub fn quantize(&mut self) {
        let q = |v: f64| v as f32 as f64;
        self.gamma = q(self.gamma);
        self.c = q(self.c);
        self.support.mapv_inplace(q);
        self.coefficients.mapv_inplace(q);
        for b in &mut self.biases {
            *b = q(*b);
        }
    }
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clusters(seed: u64, per: usize, centers: &[(f64, f64)]) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = per * centers.len();
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                x[[r, 0]] = cx + (rng.random::<f64>() - 0.5) * 0.5;
                x[[r, 1]] = cy + (rng.random::<f64>() - 0.5) * 0.5;
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_are_fit_exactly() {
        let (x, y) = clusters(1, 20, &[(0.0, 0.0), (3.0, 0.0), (0.0, 3.0)]);
        let (m, report) = SvmModel::train(x.view(), &y, &SvmParams::default()).unwrap();
        assert_eq!(m.predict(x.view()).unwrap().labels, y);
        assert!(report.max_kkt_violation() <= 1e-3);
        for p in &report.problems {
            assert!(p.equality_residual < 1e-6);
        }
        assert!(m.coefficients.iter().all(|&a| a.abs() <= m.c + 1e-12));
    }

    #[test]
    fn xor_with_unit_gamma() {
        let x = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = vec![0, 0, 1, 1];
        let params = SvmParams {
            gamma: Some(1.0),
            ..SvmParams::default()
        };
        let (m, _) = SvmModel::train(x.view(), &y, &params).unwrap();
        assert_eq!(m.predict(x.view()).unwrap().labels, y);
    }

    #[test]
    fn decisions_match_kernel_expansion() {
        let (x, y) = clusters(2, 15, &[(0.0, 0.0), (1.0, 1.0)]);
        let (m, _) = SvmModel::train(x.view(), &y, &SvmParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probe = Array2::from_shape_fn((10, 2), |_| rng.random::<f64>() * 2.0 - 0.5);
        let d = m.decision_values(probe.view()).unwrap();
        for i in 0..10 {
            for c in 0..2 {
                let mut f = m.biases[c];
                for s in 0..m.support.nrows() {
                    f += m.coefficients[[c, s]] * gaussian(probe.row(i), m.support.row(s), m.gamma);
                }
                assert!((d[[i, c]] - f).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cached_and_dense_kernels_agree() {
        let (x, y) = clusters(4, 25, &[(0.0, 0.0), (1.0, 0.5), (0.2, 1.1)]);
        let dense = SvmModel::train(x.view(), &y, &SvmParams::default()).unwrap();
        let params = SvmParams {
            cache_mb: 0,
            ..SvmParams::default()
        };
        let cached = SvmModel::train(x.view(), &y, &params).unwrap();
        assert!(dense.1.dense_kernel && !cached.1.dense_kernel);
        assert_eq!(dense.0.predict(x.view()).unwrap().labels, cached.0.predict(x.view()).unwrap().labels);
        assert!(cached.1.max_kkt_violation() <= 1e-3);
    }

    #[test]
    fn single_class_is_a_protocol_error() {
        let x = Array2::<f64>::zeros((3, 2));
        let r = SvmModel::train(x.view(), &[1, 1, 1], &SvmParams::default());
        assert!(matches!(r, Err(ShdlError::Protocol(_))));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let (x, y) = clusters(5, 5, &[(0.0, 0.0), (2.0, 2.0)]);
        let (m, _) = SvmModel::train(x.view(), &y, &SvmParams::default()).unwrap();
        let bad = Array2::<f64>::zeros((1, 3));
        assert!(matches!(m.predict(bad.view()), Err(ShdlError::Dimension(_))));
    }

    #[test]
    fn label_permutation_preserves_accuracy() {
        let (x, y) = clusters(6, 20, &[(0.0, 0.0), (1.0, 0.0), (0.5, 0.8)]);
        let relabel = [2usize, 0, 1];
        let y2: Vec<usize> = y.iter().map(|&l| relabel[l]).collect();
        let (a, _) = SvmModel::train(x.view(), &y, &SvmParams::default()).unwrap();
        let (b, _) = SvmModel::train(x.view(), &y2, &SvmParams::default()).unwrap();
        let pa = a.predict(x.view()).unwrap().labels;
        let pb = b.predict(x.view()).unwrap().labels;
        let acc_a = accuracy(&pa, &y);
        let acc_b = accuracy(&pb, &y2);
        assert!((acc_a - acc_b).abs() < 1e-12);
    }
}
