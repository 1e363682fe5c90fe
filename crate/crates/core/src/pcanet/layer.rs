//! Patch extraction, PCA filter learning and filter-bank correlation.

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ShdlError};
use crate::linalg::{gram, symmetric_eigen};

/// Eigenvalues at or below this fraction of the largest are flagged.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Mean-removed patches, one per column.
///
/// Rows are indexed `(c * z1 + dy) * z2 + dx`; columns run image-major,
/// then row-major over patch positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub data: Array2<f64>,
    pub patch_size: (usize, usize),
    pub channels: usize,
    pub stride: usize,
}

/// Collects every valid `z1 x z2` patch across all channels of each map.
///
/// With `max_per_image`, that many positions are drawn per image by a
/// seeded sampler and kept in row-major order.
pub fn extract_patches(
    maps: &[Array3<f64>],
    patch_size: (usize, usize),
    stride: usize,
    max_per_image: Option<usize>,
    seed: u64,
) -> Result<PatchMatrix> {
    let (z1, z2) = patch_size;
    if z1 == 0 || z2 == 0 || stride == 0 {
        return Err(ShdlError::Parameter("patch size and stride must be positive".into()));
    }
    let Some(first) = maps.first() else {
        return Err(ShdlError::Validation("no feature maps for patch extraction".into()));
    };
    let channels = first.dim().0;
    let mut columns: Vec<f64> = Vec::new();
    let mut count = 0usize;
    let rows = channels * z1 * z2;
    for (idx, m) in maps.iter().enumerate() {
        let (c, h, w) = m.dim();
        if c != channels {
            return Err(ShdlError::Dimension(format!(
                "image {idx} has {c} channels, expected {channels}"
            )));
        }
        if h < z1 || w < z2 {
            return Err(ShdlError::Dimension(format!(
                "{h}x{w} map is smaller than the {z1}x{z2} patch"
            )));
        }
        let ys: Vec<usize> = (0..=h - z1).step_by(stride).collect();
        let xs: Vec<usize> = (0..=w - z2).step_by(stride).collect();
        let total = ys.len() * xs.len();
        let picks: Vec<usize> = match max_per_image {
            Some(cap) if cap < total => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut v = rand::seq::index::sample(&mut rng, total, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..total).collect(),
        };
        for p in picks {
            let (y, x) = (ys[p / xs.len()], xs[p % xs.len()]);
            let patch = m.slice(s![.., y..y + z1, x..x + z2]);
            let mean = patch.sum() / rows as f64;
            columns.extend(patch.iter().map(|v| v - mean));
            count += 1;
        }
    }
    // Collected column-major; transpose into rows x count.
    let data = Array2::from_shape_vec((count, rows), columns)
        .expect("consistent patch length")
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    Ok(PatchMatrix {
        data,
        patch_size,
        channels,
        stride,
    })
}

/// A learned PCA filter bank with its optimized count and log parameter.
///
/// `filters` holds one flattened filter per row, in the patch row order.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaLayerModel {
    pub channels: usize,
    pub patch_size: (usize, usize),
    pub filters: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    /// Trailing filters whose eigenvalue is numerically zero.
    pub rank_deficient: usize,
    pub optimal_count: usize,
    pub log_param: f64,
}

impl PcaLayerModel {
    pub fn filter_count(&self) -> usize {
        self.filters.nrows()
    }

    pub fn patch_len(&self) -> usize {
        self.filters.ncols()
    }

    /// `max |WᵀW − I|` over all filters.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.filters.dot(&self.filters.t());
        let mut worst: f64 = 0.0;
        for ((i, j), v) in g.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst
    }

    /// `||X − W Wᵀ X||²_F` using the first `count` filters.
    pub fn reconstruction_error(&self, x: &PatchMatrix, count: usize) -> f64 {
        let w = self.filters.slice(s![..count, ..]);
        let coeff = w.dot(&x.data);
        let recon = w.t().dot(&coeff);
        (&x.data - &recon).iter().map(|v| v * v).sum()
    }

    /// Filters as applied at inference: rounded to `f32`.
    pub fn applied_filters(&self, count: usize) -> Array2<f64> {
        self.filters.slice(s![..count, ..]).mapv(|v| v as f32 as f64)
    }

    pub fn quantize(&mut self) {
        self.filters.mapv_inplace(|v| v as f32 as f64);
        for e in &mut self.eigenvalues {
            *e = *e as f32 as f64;
        }
        self.log_param = self.log_param as f32 as f64;
    }

    /// Optimized output: correlation with the first `optimal_count`
    /// filters, then the signed log with `log_param`.
    pub fn forward(&self, input: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
        let y = convolve_bank(input, self, self.optimal_count)?;
        Ok(signed_log(&y, self.log_param))
    }
}

/// Top-`k` eigenvectors of `X Xᵀ`, sign-fixed so each has a positive
/// largest-magnitude entry (first such entry on ties).
pub fn learn_pca_filters(x: &PatchMatrix, k: usize) -> Result<PcaLayerModel> {
    let (rows, cols) = x.data.dim();
    if k == 0 || k > rows {
        return Err(ShdlError::Parameter(format!(
            "filter count {k} must be in 1..={rows}"
        )));
    }
    if cols < k {
        return Err(ShdlError::Parameter(format!(
            "{cols} patches cannot support {k} filters"
        )));
    }
    if x.data.iter().all(|&v| v == 0.0) {
        return Err(ShdlError::Degenerate("all patches are zero after mean removal".into()));
    }
    let cov = gram(x.data.view());
    let (values, vectors) = symmetric_eigen(cov.view())?;
    let top = values[0].max(0.0);
    let mut filters = Array2::zeros((k, rows));
    let mut eigenvalues = Vec::with_capacity(k);
    let mut rank_deficient = 0;
    for i in 0..k {
        let mut v = vectors.column(i).to_owned();
        let mut pivot = 0;
        for (r, val) in v.iter().enumerate() {
            if val.abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        if v[pivot] < 0.0 {
            v.mapv_inplace(|a| -a);
        }
        filters.row_mut(i).assign(&v);
        let lambda = values[i].max(0.0);
        if lambda <= RANK_TOLERANCE * top {
            rank_deficient += 1;
        }
        eigenvalues.push(lambda);
    }
    if rank_deficient > 0 {
        log::warn!("{rank_deficient} of {k} PCA filters have near-zero eigenvalues");
    }
    Ok(PcaLayerModel {
        channels: x.channels,
        patch_size: x.patch_size,
        filters,
        eigenvalues,
        rank_deficient,
        optimal_count: k,
        log_param: 1.0,
    })
}

/// Same-size correlation of a `P`-channel input with the first `count`
/// filters, zero-padded by `(z - 1) / 2`.
///
/// Output channel `k` at `(i, j)` is
/// `Σ_{c,dy,dx} w_k[c,dy,dx] · x[c, i+dy−oy, j+dx−ox]`, so a unit impulse
/// reproduces each filter flipped in both spatial axes.
pub fn convolve_bank(input: ArrayView3<'_, f64>, model: &PcaLayerModel, count: usize) -> Result<Array3<f64>> {
    let (p, h, w) = input.dim();
    if p != model.channels {
        return Err(ShdlError::Dimension(format!(
            "layer expects {} channels, got {p}",
            model.channels
        )));
    }
    if count == 0 || count > model.filter_count() {
        return Err(ShdlError::Parameter(format!(
            "filter count {count} must be in 1..={}",
            model.filter_count()
        )));
    }
    let (z1, z2) = model.patch_size;
    let (oy, ox) = ((z1 - 1) / 2, (z2 - 1) / 2);
    // Zero-padded patches of every output position, as columns.
    let plen = p * z1 * z2;
    let mut cols = Array2::<f64>::zeros((plen, h * w));
    for c in 0..p {
        for dy in 0..z1 {
            for dx in 0..z2 {
                let r = (c * z1 + dy) * z2 + dx;
                let mut row = cols.row_mut(r);
                for i in 0..h {
                    let sy = i as isize + dy as isize - oy as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sx = j as isize + dx as isize - ox as isize;
                        if sx >= 0 && sx < w as isize {
                            row[i * w + j] = input[[c, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    let out = model.applied_filters(count).dot(&cols);
    Ok(out.into_shape_with_order((count, h, w)).expect("count x h*w"))
}

/// `sign(y) · ln(1 + |y| / k)`: odd, continuous and increasing.
pub fn signed_log(y: &Array3<f64>, k: f64) -> Array3<f64> {
    y.mapv(|v| v.signum() * (v.abs() / k).ln_1p())
}

/// Average-pools every channel onto a `g x g` grid and flattens.
pub fn pooled_descriptor(y: ArrayView3<'_, f64>, g: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.dim().0 * g * g);
    for ch in y.axis_iter(Axis(0)) {
        let pooled = crate::scatter::pool_to_grid(&ch.to_owned(), (g, g));
        out.extend(pooled.iter().copied());
    }
    out
}
