//! Feature normalization and one-vs-all orthogonal least squares selection.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::par;
use crate::scatter::FeatureHeader;

/// Selection stops once the best error-reduction ratio drops below this.
pub const ERR_FLOOR: f64 = 1e-8;
/// Candidates whose orthogonal remainder keeps less than this fraction of
/// their energy are treated as collinear with the selected set.
const COLLINEAR: f64 = 1e-9;
const REORTHOGONALIZE: f64 = 1e-6;

/// Per-column z-score statistics, estimated on training rows.
///
/// Uses the population standard deviation (divide by `n`). Constant columns
/// are excluded: they map to zero and are never selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub excluded: Vec<usize>,
}

impl Normalizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(ShdlError::Validation(format!(
                "normalization needs at least 2 samples, got {n}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ShdlError::Validation("non-finite feature value".into()));
        }
        let means = x.mean_axis(Axis(0)).expect("non-empty");
        let mut stds = Vec::with_capacity(x.ncols());
        let mut excluded = Vec::new();
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let m = means[j];
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                excluded.push(j);
                stds.push(0.0);
            } else {
                stds.push(s);
            }
        }
        if !excluded.is_empty() {
            log::warn!("{} constant feature columns excluded", excluded.len());
        }
        Ok(Self {
            means: means.to_vec(),
            stds,
            excluded,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(ShdlError::Dimension(format!(
                "normalizer fitted on {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if s == 0.0 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        Ok(out)
    }

    /// Rounds the statistics to `f32` precision.
    pub fn quantize(&mut self) {
        for v in self.means.iter_mut().chain(self.stds.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

/// Fits statistics on `x` and returns the normalized table.
pub fn normalize_features(x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Normalizer)> {
    let norm = Normalizer::fit(x)?;
    let out = norm.transform(x)?;
    Ok((out, norm))
}

/// Greedy selection for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub class: usize,
    pub indices: Vec<usize>,
    /// Error-reduction ratio of each step.
    pub err: Vec<f64>,
    /// Residual target energy after each step.
    pub residual: Vec<f64>,
}

/// One-vs-all selections and their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsSelection {
    pub per_class: Vec<ClassSelection>,
    /// Ascending union of all per-class indices.
    pub union: Vec<usize>,
    pub truncated: bool,
}

/// Greedy error-reduction-ratio selection of up to `budget` columns per class.
///
/// Candidate remainders are never formed: only their energies and target
/// correlations are updated as the orthonormal basis grows.
pub fn ols_select(x: ArrayView2<'_, f64>, labels: &[usize], budget: usize) -> Result<OlsSelection> {
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(ShdlError::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if budget == 0 || budget > d {
        return Err(ShdlError::Parameter(format!(
            "OLS budget {budget} must be in 1..={d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ShdlError::Validation("non-finite feature value".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let norms2 = x.map_axis(Axis(0), |c| c.dot(&c));
    let usable = norms2.iter().filter(|&&v| v > 0.0).count();
    let truncated = budget > usable;
    if truncated {
        log::warn!("OLS budget {budget} exceeds {usable} usable columns; selection truncated");
    }

    let per_class = par::try_map(&classes, |&class| {
        let target: Array1<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        select_class(x, &norms2, &target, class, budget)
    })?;

    let mut union: Vec<usize> = per_class.iter().flat_map(|c| c.indices.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    Ok(OlsSelection {
        per_class,
        union,
        truncated,
    })
}

fn select_class(
    x: ArrayView2<'_, f64>,
    norms2: &Array1<f64>,
    target: &Array1<f64>,
    class: usize,
    budget: usize,
) -> Result<ClassSelection> {
    let d = x.ncols();
    let t_energy = target.dot(target);
    let corr = x.t().dot(target);
    let mut proj2 = vec![0.0; d];
    let mut proj_t = vec![0.0; d];
    let mut chosen = vec![false; d];
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut residual = t_energy;
    let mut out = ClassSelection {
        class,
        indices: Vec::new(),
        err: Vec::new(),
        residual: Vec::new(),
    };

    while out.indices.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..d {
            if chosen[k] || norms2[k] <= 0.0 {
                continue;
            }
            let w2 = norms2[k] - proj2[k];
            if w2 <= COLLINEAR * norms2[k] {
                continue;
            }
            let wt = corr[k] - proj_t[k];
            let err = wt * wt / (w2 * t_energy);
            if best.is_none_or(|(_, b)| err > b) {
                best = Some((k, err));
            }
        }
        let Some((k, err)) = best else { break };
        if err < ERR_FLOOR {
            break;
        }

        let q = orthonormal_remainder(x.column(k).to_owned(), &basis);
        let Some(q) = q else {
            chosen[k] = true;
            continue;
        };
        let qt = q.dot(target);
        let residual_next = residual - qt * qt;
        if residual_next >= residual {
            break;
        }
        residual = residual_next;
        let qx = x.t().dot(&q);
        for j in 0..d {
            proj2[j] += qx[j] * qx[j];
            proj_t[j] += qx[j] * qt;
        }
        chosen[k] = true;
        basis.push(q);
        out.indices.push(k);
        out.err.push(err);
        out.residual.push(residual.max(0.0));
    }
    Ok(out)
}

/// Modified Gram-Schmidt against `basis`, repeated once when the result
/// is visibly non-orthogonal. `None` when nothing is left.
fn orthonormal_remainder(mut w: Array1<f64>, basis: &[Array1<f64>]) -> Option<Array1<f64>> {
    let start = w.dot(&w);
    for _pass in 0..2 {
        for q in basis {
            let c = q.dot(&w);
            w.scaled_add(-c, q);
        }
        let norm = w.dot(&w).sqrt();
        if norm * norm <= COLLINEAR * start {
            return None;
        }
        let unit = &w / norm;
        let loss = basis.iter().map(|q| q.dot(&unit).abs()).fold(0.0, f64::max);
        if loss <= REORTHOGONALIZE {
            return Some(unit);
        }
    }
    let norm = w.dot(&w).sqrt();
    Some(w / norm)
}

/// Restricts `x` to the selected columns, in ascending index order.
pub fn reduce(x: ArrayView2<'_, f64>, selection: &OlsSelection) -> Result<Array2<f64>> {
    reduce_columns(x, &selection.union)
}

/// Column subset of `x`.
pub fn reduce_columns(x: ArrayView2<'_, f64>, columns: &[usize]) -> Result<Array2<f64>> {
    if columns.is_empty() {
        return Err(ShdlError::Consistency("empty feature selection".into()));
    }
    if let Some(&bad) = columns.iter().find(|&&c| c >= x.ncols()) {
        return Err(ShdlError::Consistency(format!(
            "selected column {bad} out of range for {} columns",
            x.ncols()
        )));
    }
    Ok(x.select(Axis(1), columns))
}

/// Text report of every selection step, mapped to feature descriptors.
pub fn selection_report(selection: &OlsSelection, header: Option<&FeatureHeader>) -> String {
    let mut s = String::from("# class step column err descriptor\n");
    for cls in &selection.per_class {
        for (step, (&col, &err)) in cls.indices.iter().zip(&cls.err).enumerate() {
            let desc = header.map_or_else(|| "-".to_string(), |h| describe(h, col));
            let _ = writeln!(s, "{} {} {} {:.6e} {}", cls.class, step + 1, col, err, desc);
        }
    }
    let _ = writeln!(s, "# union {}", selection.union.len());
    s
}

fn describe(header: &FeatureHeader, col: usize) -> String {
    let pos = header
        .entries
        .partition_point(|e| e.offset + e.rows * e.cols <= col);
    match header.entries.get(pos) {
        Some(e) if e.offset <= col => {
            let local = col - e.offset;
            format!("{}[{},{}]", e.descriptor, local / e.cols.max(1), local % e.cols.max(1))
        }
        _ => "?".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_z_score() {
        let x = Array2::from_shape_vec((2, 1), vec![1.0, 3.0]).unwrap();
        let (z, n) = normalize_features(x.view()).unwrap();
        assert_eq!(z.column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(n.stds, vec![1.0]);
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((30, 4), |_| rng.random::<f64>() * 5.0);
        let (z, _) = normalize_features(x.view()).unwrap();
        let (z2, _) = normalize_features(z.view()).unwrap();
        assert!((&z - &z2).iter().all(|v| v.abs() < 1e-9));
        for col in z.columns() {
            assert!(col.mean().unwrap().abs() < 1e-9);
            let var = col.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_column_is_excluded() {
        let x = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let (z, n) = normalize_features(x.view()).unwrap();
        assert_eq!(n.excluded, vec![1]);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        let sel = ols_select(z.view(), &[0, 1, 1], 2).unwrap();
        assert!(sel.union.iter().all(|&c| c != 1));
    }

    #[test]
    fn perfect_regressor_goes_first_and_stops() {
        let labels = [0, 0, 1, 1, 0, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>());
        for (i, &l) in labels.iter().enumerate() {
            x[[i, 2]] = if l == 1 { 1.0 } else { -1.0 };
        }
        let sel = ols_select(x.view(), &labels, 3).unwrap();
        for cls in &sel.per_class {
            assert_eq!(cls.indices, vec![2]);
            assert!(cls.residual[0] < 1e-20);
        }
    }

    #[test]
    fn duplicate_column_selected_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>() - 0.5);
        let c0 = x.column(0).to_owned();
        x.column_mut(3).assign(&c0);
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let sel = ols_select(x.view(), &labels, 5).unwrap();
        for cls in &sel.per_class {
            assert!(!(cls.indices.contains(&0) && cls.indices.contains(&3)));
        }
    }

    #[test]
    fn basis_stays_orthogonal_and_residual_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((60, 40), |_| rng.random::<f64>() - 0.5);
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let sel = ols_select(x.view(), &labels, 15).unwrap();
        for cls in &sel.per_class {
            assert!(cls.residual.windows(2).all(|w| w[1] < w[0]));
            let cols = reduce_columns(x.view(), &cls.indices).unwrap();
            let mut basis = Vec::new();
            for c in cols.columns() {
                basis.push(orthonormal_remainder(c.to_owned(), &basis).unwrap());
            }
            for i in 0..basis.len() {
                for j in 0..i {
                    assert!(basis[i].dot(&basis[j]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((30, 10), |_| rng.random::<f64>() - 0.5);
        let labels: Vec<usize> = (0..30).map(|i| (i * 7) % 3).collect();
        let perm: Vec<usize> = vec![3, 7, 1, 0, 9, 2, 8, 4, 6, 5];
        let xp = x.select(Axis(1), &perm);
        let a = ols_select(x.view(), &labels, 4).unwrap();
        let b = ols_select(xp.view(), &labels, 4).unwrap();
        for (ca, cb) in a.per_class.iter().zip(&b.per_class) {
            let mapped: Vec<usize> = cb.indices.iter().map(|&i| perm[i]).collect();
            assert_eq!(ca.indices, mapped);
        }
    }

    #[test]
    fn reduce_guards() {
        let x = Array2::<f64>::zeros((3, 4));
        let empty = OlsSelection {
            per_class: vec![],
            union: vec![],
            truncated: false,
        };
        assert!(matches!(reduce(x.view(), &empty), Err(ShdlError::Consistency(_))));
        assert!(matches!(reduce_columns(x.view(), &[4]), Err(ShdlError::Consistency(_))));
        let all = reduce_columns(x.view(), &[0, 1, 2, 3]).unwrap();
        assert_eq!(all, x);
    }

    #[test]
    fn report_maps_descriptors() {
        let mut h = FeatureHeader::default();
        h.push("A".into(), 2, 2);
        h.push("B".into(), 1, 3);
        assert_eq!(describe(&h, 3), "A[1,1]");
        assert_eq!(describe(&h, 5), "B[0,1]");
        assert_eq!(describe(&h, 7), "?");
    }
}
