//! Area-weighted resampling of maps onto a common grid.

use ndarray::Array2;

/// Row-stochastic `n_out x n_in` matrix: output cell `i` averages the input
/// cells overlapping `[i, i + 1) * n_in / n_out`, weighted by overlap.
pub fn grid_weights(n_in: usize, n_out: usize) -> Array2<f64> {
    let mut w = Array2::zeros((n_out, n_in));
    if n_in == 0 || n_out == 0 {
        return w;
    }
    // Work in units of 1 / (n_in * n_out) to keep the overlaps exact.
    let span_in = n_out;
    let span_out = n_in;
    for i in 0..n_out {
        let (a, b) = (i * span_out, (i + 1) * span_out);
        let first = a / span_in;
        let last = (b - 1) / span_in;
        for k in first..=last.min(n_in - 1) {
            let (c, d) = (k * span_in, (k + 1) * span_in);
            let overlap = b.min(d).saturating_sub(a.max(c));
            w[[i, k]] = overlap as f64 / span_out as f64;
        }
    }
    w
}

/// Resamples `map` onto a `grid` of the given shape.
///
/// Shrinking averages whole blocks; growing replicates.
pub fn pool_to_grid(map: &Array2<f64>, grid: (usize, usize)) -> Array2<f64> {
    let (h, w) = map.dim();
    if (h, w) == grid {
        return map.clone();
    }
    let rows = grid_weights(h, grid.0);
    let cols = grid_weights(w, grid.1);
    rows.dot(map).dot(&cols.t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_are_row_stochastic() {
        for n_in in 1..20 {
            for n_out in 1..20 {
                let w = grid_weights(n_in, n_out);
                for row in w.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
                assert!(w.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn integer_factor_is_block_mean() {
        let m = Array2::from_shape_fn((32, 32), |(i, j)| (i * 32 + j) as f64);
        let p = pool_to_grid(&m, (8, 8));
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        s += m[[4 * i + a, 4 * j + b]];
                    }
                }
                assert!((p[[i, j]] - s / 16.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coarse_maps_are_replicated() {
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pool_to_grid(&m, (8, 8));
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(p[[3, 7]], 2.0);
        assert_eq!(p[[7, 0]], 3.0);
        assert_eq!(p[[4, 4]], 4.0);
    }

    #[test]
    fn mean_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (h, w, g) in [(32, 32, (8, 8)), (24, 24, (6, 6)), (16, 12, (8, 8)), (17, 9, (6, 6))] {
            let m = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
            let p = pool_to_grid(&m, g);
            // Equal-area output cells preserve the mean exactly.
            assert!((p.mean().unwrap() - m.mean().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn shrinking_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = Array2::from_shape_fn((24, 24), |_| rng.random::<f64>() - 0.5);
            let b = Array2::from_shape_fn((24, 24), |_| rng.random::<f64>() - 0.5);
            let d_in = (&a - &b).mapv(|v| v * v).mean().unwrap();
            let d_out = (&pool_to_grid(&a, (6, 6)) - &pool_to_grid(&b, (6, 6)))
                .mapv(|v| v * v)
                .mean()
                .unwrap();
            assert!(d_out <= d_in + 1e-12);
        }
    }
}
