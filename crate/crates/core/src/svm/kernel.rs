//! Gaussian kernel evaluation and row providers for the solver.

use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// `exp(-gamma * ||a - b||²)`.
pub fn gaussian(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

fn squared_norms(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r))
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let na = squared_norms(a);
    let nb = squared_norms(b);
    let mut k = a.dot(&b.t());
    for ((i, j), v) in k.indexed_iter_mut() {
        let d2 = (na[i] + nb[j] - 2.0 * *v).max(0.0);
        *v = (-gamma * d2).exp();
    }
    k
}

/// Symmetric Gram matrix of the rows of `x`, with an exact unit diagonal.
pub fn gram_matrix(x: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let norms = squared_norms(x);
    let mut k = crate::linalg::gram(x);
    for ((i, j), v) in k.indexed_iter_mut() {
        let d2 = if i == j { 0.0 } else { (norms[i] + norms[j] - 2.0 * *v).max(0.0) };
        *v = (-gamma * d2).exp();
    }
    k
}

/// Source of kernel rows for the SMO solver.
pub trait KernelRows {
    fn len(&self) -> usize;
    fn row(&mut self, i: usize) -> Arc<[f64]>;
    fn diagonal(&self, i: usize) -> f64;
}

/// Fully precomputed Gram matrix, shareable across binary problems.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    rows: Arc<Vec<Arc<[f64]>>>,
}

impl DenseKernel {
    pub fn new(gram: &Array2<f64>) -> Self {
        let rows = gram.rows().into_iter().map(|r| Arc::from(r.to_vec())).collect();
        Self { rows: Arc::new(rows) }
    }
}

impl KernelRows for DenseKernel {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        Arc::clone(&self.rows[i])
    }

    fn diagonal(&self, i: usize) -> f64 {
        self.rows[i][i]
    }
}

/// Rows computed on demand and kept in a bounded LRU cache.
pub struct CachedKernel {
    x: Arc<Array2<f64>>,
    norms: Arc<Array1<f64>>,
    gamma: f64,
    cache: LruCache<usize, Arc<[f64]>>,
}

impl CachedKernel {
    /// `capacity_rows` is clamped to at least 2 (the working pair).
    pub fn new(x: Arc<Array2<f64>>, gamma: f64, capacity_rows: usize) -> Self {
        let norms = Arc::new(squared_norms(x.view()));
        let cap = NonZeroUsize::new(capacity_rows.max(2)).expect("non-zero");
        Self {
            x,
            norms,
            gamma,
            cache: LruCache::new(cap),
        }
    }
}

impl KernelRows for CachedKernel {
    fn len(&self) -> usize {
        self.x.nrows()
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        if let Some(r) = self.cache.get(&i) {
            return Arc::clone(r);
        }
        let xi = self.x.row(i);
        let dots = self.x.dot(&xi);
        let ni = self.norms[i];
        let row: Arc<[f64]> = dots
            .iter()
            .zip(self.norms.iter())
            .enumerate()
            .map(|(t, (&d, &nt))| {
                let d2 = if t == i { 0.0 } else { (ni + nt - 2.0 * d).max(0.0) };
                (-self.gamma * d2).exp()
            })
            .collect();
        self.cache.put(i, Arc::clone(&row));
        row
    }

    fn diagonal(&self, _i: usize) -> f64 {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>());
        let k = gram_matrix(x.view(), 0.7);
        for i in 0..20 {
            assert_eq!(k[[i, i]], 1.0);
            for j in 0..20 {
                assert_eq!(k[[i, j]], k[[j, i]]);
                assert!(k[[i, j]] > 0.0 && k[[i, j]] <= 1.0);
                let direct = gaussian(x.row(i), x.row(j), 0.7);
                assert!((k[[i, j]] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cached_rows_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Arc::new(Array2::from_shape_fn((15, 4), |_| rng.random::<f64>()));
        let dense = gram_matrix(x.view(), 1.3);
        let mut cached = CachedKernel::new(Arc::clone(&x), 1.3, 3);
        for i in [0, 5, 3, 0, 14, 5, 7] {
            let r = cached.row(i);
            for t in 0..15 {
                assert!((r[t] - dense[[i, t]]).abs() < 1e-12);
            }
        }
    }
}
