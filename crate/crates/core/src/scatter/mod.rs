//! Multi-resolution scattering front end built on the dual-tree transform.

mod dump;
mod logparam;
mod pool;

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::par;
use crate::tensor::ImageTensor;
use crate::wavelet::{build_filter_bank, dtcwt_forward, modulus, FilterBank, Orientation};

pub use dump::{read_feature_dump, write_feature_dump, FeatureDump, FeatureHeader, HeaderEntry};
pub use logparam::{apply_log, log_grid, mean_median_gap, select_log_parameter, LogParamChoice};
pub use pool::{grid_weights, pool_to_grid};

/// Log parameters used when no data-driven selection has been run.
pub const DEFAULT_LOG_PARAMS: [f64; 6] = [1.1, 3.8, 3.8, 7.0, 6.8, 6.8];

/// Scattering settings. Per-resolution vectors are indexed by resolution,
/// log parameters by `scale - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterConfig {
    pub resolution_factors: Vec<f64>,
    pub scales: Vec<usize>,
    /// Pooled grid side is `ceil(resolution side / pool_factor)`.
    pub pool_factor: usize,
    pub filters: String,
    pub select_k: bool,
    pub k_grid_min: f64,
    pub k_grid_max: f64,
    pub k_grid_count: usize,
    /// Per-image, per-scale sample cap for the selection statistics.
    pub k_max_samples: usize,
    pub k_l1: Vec<Vec<f64>>,
    pub k_l2: Vec<Vec<f64>>,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self::with_scales(vec![2.0, 1.5], vec![5, 4])
    }
}

impl ScatterConfig {
    /// Config with default log parameters sized for the given scales.
    pub fn with_scales(resolution_factors: Vec<f64>, scales: Vec<usize>) -> Self {
        let ks: Vec<Vec<f64>> = scales
            .iter()
            .map(|&j| {
                (0..j.saturating_sub(1))
                    .map(|i| DEFAULT_LOG_PARAMS[i.min(DEFAULT_LOG_PARAMS.len() - 1)])
                    .collect()
            })
            .collect();
        Self {
            resolution_factors,
            scales,
            pool_factor: 8,
            filters: "default".into(),
            select_k: true,
            k_grid_min: 0.01,
            k_grid_max: 20.0,
            k_grid_count: 50,
            k_max_samples: 4096,
            k_l1: ks.clone(),
            k_l2: ks,
        }
    }

    pub fn num_resolutions(&self) -> usize {
        self.resolution_factors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.resolution_factors.len();
        if n == 0 {
            return Err(ShdlError::Config("at least one resolution is required".into()));
        }
        if self.scales.len() != n || self.k_l1.len() != n || self.k_l2.len() != n {
            return Err(ShdlError::Config(
                "scatter resolutions, scales and log parameters must have equal lengths".into(),
            ));
        }
        for (r, &f) in self.resolution_factors.iter().enumerate() {
            if !(f.is_finite() && f > 1.0) {
                return Err(ShdlError::Config(format!(
                    "resolution factor {f} (resolution {}) must exceed 1",
                    r + 1
                )));
            }
            let j = self.scales[r];
            if j < 2 {
                return Err(ShdlError::Config(format!(
                    "resolution {} needs at least 2 scales, got {j}",
                    r + 1
                )));
            }
            for (name, ks) in [("k_l1", &self.k_l1[r]), ("k_l2", &self.k_l2[r])] {
                if ks.len() < j - 1 {
                    return Err(ShdlError::Config(format!(
                        "{name} for resolution {} needs {} entries, got {}",
                        r + 1,
                        j - 1,
                        ks.len()
                    )));
                }
                if ks.iter().any(|&k| !(k.is_finite() && k > 0.0)) {
                    return Err(ShdlError::Config(format!("{name} values must be positive")));
                }
            }
        }
        if self.pool_factor == 0 {
            return Err(ShdlError::Config("pool_factor must be positive".into()));
        }
        if self.k_max_samples == 0 {
            return Err(ShdlError::Config("k_max_samples must be positive".into()));
        }
        log_grid(self.k_grid_min, self.k_grid_max, self.k_grid_count)
            .map_err(|e| ShdlError::Config(e.to_string()))?;
        Ok(())
    }

    /// Side lengths of resolution `r` for an input of `shape`.
    pub fn resolution_shape(&self, r: usize, shape: (usize, usize)) -> (usize, usize) {
        let f = self.resolution_factors[r];
        (scaled(shape.0, f), scaled(shape.1, f))
    }

    /// Pooled grid of resolution `r` for an input of `shape`.
    pub fn grid_shape(&self, r: usize, shape: (usize, usize)) -> (usize, usize) {
        let (h, w) = self.resolution_shape(r, shape);
        (h.div_ceil(self.pool_factor), w.div_ceil(self.pool_factor))
    }
}

fn scaled(n: usize, factor: f64) -> usize {
    ((n as f64 * factor).round() as usize).max(1)
}

/// Scattering layer of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScatterLayer {
    L0,
    L1,
    L2,
}

impl fmt::Display for ScatterLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScatterLayer::L0 => "L0",
            ScatterLayer::L1 => "L1",
            ScatterLayer::L2 => "L2",
        };
        f.write_str(s)
    }
}

/// Identifies one pooled scattering map. `resolution` is zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathDescriptor {
    pub resolution: usize,
    pub layer: ScatterLayer,
    pub color: usize,
    pub j1: Option<usize>,
    pub r1: Option<Orientation>,
    pub j2: Option<usize>,
    pub r2: Option<Orientation>,
}

impl PathDescriptor {
    fn zeroth(resolution: usize, color: usize) -> Self {
        Self {
            resolution,
            layer: ScatterLayer::L0,
            color,
            j1: None,
            r1: None,
            j2: None,
            r2: None,
        }
    }

    fn first(resolution: usize, color: usize, j1: usize, r1: Orientation) -> Self {
        Self {
            layer: ScatterLayer::L1,
            j1: Some(j1),
            r1: Some(r1),
            ..Self::zeroth(resolution, color)
        }
    }

    fn second(resolution: usize, color: usize, j1: usize, r1: Orientation, j2: usize, r2: Orientation) -> Self {
        Self {
            layer: ScatterLayer::L2,
            j2: Some(j2),
            r2: Some(r2),
            ..Self::first(resolution, color, j1, r1)
        }
    }
}

impl fmt::Display for PathDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}/{}/c{}", self.resolution + 1, self.layer, self.color)?;
        match (self.j1, self.r1, self.j2, self.r2) {
            (Some(j1), Some(r1), Some(j2), Some(r2)) => {
                write!(f, "/j1={j1},j2={j2}/r1={r1},r2={r2}")
            }
            (Some(j1), Some(r1), _, _) => write!(f, "/j1={j1}/r1={r1}"),
            _ => Ok(()),
        }
    }
}

/// One pooled map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMap {
    pub path: PathDescriptor,
    pub values: Array2<f64>,
}

/// Pooled scattering maps of one image, grouped by resolution, then layer,
/// then color.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScatterFeatures {
    pub maps: Vec<ScatterMap>,
}

impl ScatterFeatures {
    pub fn len(&self) -> usize {
        self.maps.iter().map(|m| m.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for m in &self.maps {
            out.extend(m.values.iter().copied());
        }
        out
    }

    /// Maps of one resolution and layer, in stored order.
    pub fn stream(&self, resolution: usize, layer: ScatterLayer) -> Vec<&ScatterMap> {
        self.maps
            .iter()
            .filter(|m| m.path.resolution == resolution && m.path.layer == layer)
            .collect()
    }

    pub fn header(&self) -> FeatureHeader {
        let mut h = FeatureHeader::default();
        for m in &self.maps {
            let (r, c) = m.values.dim();
            h.push(m.path.to_string(), r, c);
        }
        h
    }
}

/// Bicubic copies of `image` at each factor.
pub fn make_resolutions(image: &ImageTensor, factors: &[f64]) -> Result<Vec<ImageTensor>> {
    if image.is_empty() {
        return Err(ShdlError::Validation("empty image".into()));
    }
    factors
        .iter()
        .map(|&f| {
            if !(f.is_finite() && f > 0.0) {
                return Err(ShdlError::Parameter(format!("invalid resolution factor {f}")));
            }
            let (h, w) = (scaled(image.height(), f), scaled(image.width(), f));
            Ok(image.resize_bicubic(h, w))
        })
        .collect()
}

/// Data-driven log parameters averaged over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogParamSelection {
    pub k_l1: Vec<Vec<f64>>,
    pub k_l2: Vec<Vec<f64>>,
    /// Images whose samples were constant for a given resolution/layer/scale.
    pub degenerate: Vec<String>,
}

/// Configured scattering transform with its filter bank.
#[derive(Debug, Clone)]
pub struct Scatterer {
    config: ScatterConfig,
    bank: FilterBank,
}

struct FirstLayer {
    lowpass: Array2<f64>,
    /// Indexed by `(scale - 1) * 6 + orientation`.
    moduli: Vec<Array2<f64>>,
}

impl Scatterer {
    pub fn new(config: ScatterConfig) -> Result<Self> {
        config.validate()?;
        let bank = build_filter_bank(&config.filters)?;
        Ok(Self { config, bank })
    }

    pub fn config(&self) -> &ScatterConfig {
        &self.config
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn set_log_params(&mut self, k_l1: Vec<Vec<f64>>, k_l2: Vec<Vec<f64>>) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.k_l1 = k_l1;
        cfg.k_l2 = k_l2;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        if image.is_empty() {
            return Err(ShdlError::Validation("empty image".into()));
        }
        image.validate_finite()?;
        let shape = (image.height(), image.width());
        for r in 0..self.config.num_resolutions() {
            let (h, w) = self.config.resolution_shape(r, shape);
            let need = 1usize << self.config.scales[r];
            if h < need || w < need {
                return Err(ShdlError::Dimension(format!(
                    "resolution {} is {h}x{w}, needs >= {need} per side for {} scales",
                    r + 1,
                    self.config.scales[r]
                )));
            }
        }
        Ok(())
    }

    fn first_layer(&self, channel: ndarray::ArrayView2<'_, f64>, levels: usize) -> Result<FirstLayer> {
        let pyr = dtcwt_forward(channel, levels, &self.bank)?;
        let moduli = pyr.subbands.iter().map(modulus).collect::<Result<Vec<_>>>()?;
        Ok(FirstLayer {
            lowpass: pyr.lowpass,
            moduli,
        })
    }

    /// Log-compressed first-layer modulus, the input to the second layer.
    fn rescaled(&self, r: usize, j1: usize, u: &Array2<f64>) -> Result<Array2<f64>> {
        if j1 < self.config.scales[r] {
            apply_log(u, self.config.k_l1[r][j1 - 1])
        } else {
            Ok(u.clone())
        }
    }

    /// Second-layer moduli for one rescaled first-layer map, keyed by `j2`.
    fn second_layer(
        &self,
        r: usize,
        j1: usize,
        u1: &Array2<f64>,
    ) -> Result<Vec<(usize, Orientation, Array2<f64>)>> {
        let levels = self.config.scales[r] - j1;
        let pyr = dtcwt_forward(u1.view(), levels, &self.bank)?;
        let mut out = Vec::with_capacity(6 * levels);
        for band in &pyr.subbands {
            out.push((j1 + band.scale, band.orientation, modulus(band)?));
        }
        Ok(out)
    }

    /// Pooled scattering maps of one image.
    pub fn transform(&self, image: &ImageTensor) -> Result<ScatterFeatures> {
        self.check_input(image)?;
        let shape = (image.height(), image.width());
        let resolutions = make_resolutions(image, &self.config.resolution_factors)?;
        let mut maps = Vec::new();
        for (r, res) in resolutions.iter().enumerate() {
            let big_j = self.config.scales[r];
            let grid = self.config.grid_shape(r, shape);
            let mut l0 = Vec::new();
            let mut l1 = Vec::new();
            let mut l2 = Vec::new();
            for c in 0..res.channels() {
                let first = self.first_layer(res.channel(c), big_j)?;
                // Undo the low-pass DC gain so a constant image maps to itself.
                let gain = (1u64 << big_j) as f64;
                l0.push(ScatterMap {
                    path: PathDescriptor::zeroth(r, c),
                    values: pool_to_grid(&first.lowpass.mapv(|v| v / gain), grid),
                });
                for j1 in 1..=big_j {
                    for o in Orientation::ALL {
                        let u1 = self.rescaled(r, j1, &first.moduli[(j1 - 1) * 6 + o.index()])?;
                        l1.push(ScatterMap {
                            path: PathDescriptor::first(r, c, j1, o),
                            values: pool_to_grid(&u1.mapv(f64::abs), grid),
                        });
                        if j1 == big_j {
                            continue;
                        }
                        for (j2, o2, u2) in self.second_layer(r, j1, &u1)? {
                            let u2 = if j2 < big_j {
                                apply_log(&u2, self.config.k_l2[r][j2 - 1])?
                            } else {
                                u2
                            };
                            l2.push(ScatterMap {
                                path: PathDescriptor::second(r, c, j1, o, j2, o2),
                                values: pool_to_grid(&u2, grid),
                            });
                        }
                    }
                }
            }
            maps.extend(l0);
            maps.extend(l1);
            maps.extend(l2);
        }
        Ok(ScatterFeatures { maps })
    }

    /// Transforms every image, in order.
    pub fn transform_batch(&self, images: &[ImageTensor]) -> Result<Vec<ScatterFeatures>> {
        par::try_map(images, |im| self.transform(im))
    }

    /// Path layout, and map shapes, for an input of `channels x shape`.
    pub fn layout(&self, channels: usize, shape: (usize, usize)) -> Vec<(PathDescriptor, (usize, usize))> {
        let mut out = Vec::new();
        for r in 0..self.config.num_resolutions() {
            let big_j = self.config.scales[r];
            let grid = self.config.grid_shape(r, shape);
            for c in 0..channels {
                out.push((PathDescriptor::zeroth(r, c), grid));
            }
            for c in 0..channels {
                for j1 in 1..=big_j {
                    for o in Orientation::ALL {
                        out.push((PathDescriptor::first(r, c, j1, o), grid));
                    }
                }
            }
            for c in 0..channels {
                for j1 in 1..big_j {
                    for o in Orientation::ALL {
                        for j2 in j1 + 1..=big_j {
                            for o2 in Orientation::ALL {
                                out.push((PathDescriptor::second(r, c, j1, o, j2, o2), grid));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// First-layer modulus samples of one image, per resolution and scale `j < J`.
    fn l1_samples(&self, image: &ImageTensor) -> Result<Vec<Vec<Vec<f64>>>> {
        let resolutions = make_resolutions(image, &self.config.resolution_factors)?;
        let mut out = Vec::new();
        for (r, res) in resolutions.iter().enumerate() {
            let big_j = self.config.scales[r];
            let mut per_scale = vec![Vec::new(); big_j - 1];
            for c in 0..res.channels() {
                let first = self.first_layer(res.channel(c), big_j)?;
                for (j, bucket) in per_scale.iter_mut().enumerate() {
                    for o in 0..6 {
                        bucket.extend(first.moduli[j * 6 + o].iter().copied());
                    }
                }
            }
            out.push(per_scale.into_iter().map(|s| strided(s, self.config.k_max_samples)).collect());
        }
        Ok(out)
    }

    /// Second-layer modulus samples, per resolution and `j2 < J` (index `j2 - 1`).
    fn l2_samples(&self, image: &ImageTensor) -> Result<Vec<Vec<Vec<f64>>>> {
        let resolutions = make_resolutions(image, &self.config.resolution_factors)?;
        let mut out = Vec::new();
        for (r, res) in resolutions.iter().enumerate() {
            let big_j = self.config.scales[r];
            let mut per_scale = vec![Vec::new(); big_j - 1];
            for c in 0..res.channels() {
                let first = self.first_layer(res.channel(c), big_j)?;
                for j1 in 1..big_j - 1 {
                    for o in 0..6 {
                        let u1 = self.rescaled(r, j1, &first.moduli[(j1 - 1) * 6 + o])?;
                        for (j2, _, u2) in self.second_layer(r, j1, &u1)? {
                            if j2 < big_j {
                                per_scale[j2 - 1].extend(u2.iter().copied());
                            }
                        }
                    }
                }
            }
            out.push(per_scale.into_iter().map(|s| strided(s, self.config.k_max_samples)).collect());
        }
        Ok(out)
    }

    /// Selects every log parameter from `images` and installs the result.
    ///
    /// First-layer parameters are installed before second-layer samples
    /// are drawn.
    pub fn select_log_params(&mut self, images: &[ImageTensor]) -> Result<LogParamSelection> {
        if images.is_empty() {
            return Err(ShdlError::Validation("no images for log-parameter selection".into()));
        }
        for im in images {
            self.check_input(im)?;
        }
        let grid = log_grid(self.config.k_grid_min, self.config.k_grid_max, self.config.k_grid_count)?;
        let mut degenerate = Vec::new();

        let samples = par::try_map(images, |im| self.l1_samples(im))?;
        let k_l1 = self.average_choices(&samples, &grid, &self.config.k_l1, "L1", 1, &mut degenerate)?;
        let k_l2_keep = self.config.k_l2.clone();
        self.set_log_params(k_l1, k_l2_keep)?;

        let samples = par::try_map(images, |im| self.l2_samples(im))?;
        let k_l2 = self.average_choices(&samples, &grid, &self.config.k_l2, "L2", 2, &mut degenerate)?;
        let k_l1 = self.config.k_l1.clone();
        self.set_log_params(k_l1.clone(), k_l2.clone())?;
        Ok(LogParamSelection {
            k_l1,
            k_l2,
            degenerate,
        })
    }

    fn average_choices(
        &self,
        samples: &[Vec<Vec<Vec<f64>>>],
        grid: &[f64],
        fallback: &[Vec<f64>],
        layer: &str,
        first_scale: usize,
        degenerate: &mut Vec<String>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = fallback.to_vec();
        for r in 0..self.config.num_resolutions() {
            for j in first_scale..self.config.scales[r] {
                let mut sum = 0.0;
                let mut n = 0usize;
                for (i, image) in samples.iter().enumerate() {
                    let s = &image[r][j - 1];
                    if s.is_empty() {
                        continue;
                    }
                    let choice = select_log_parameter(s, grid)?;
                    if choice.degenerate {
                        degenerate.push(format!("image {i} R{}/{layer}/j={j}", r + 1));
                    } else {
                        sum += choice.k;
                        n += 1;
                    }
                }
                if n > 0 {
                    out[r][j - 1] = sum / n as f64;
                } else {
                    log::warn!(
                        "R{}/{layer}/j={j}: every image is constant, keeping k={}",
                        r + 1,
                        out[r][j - 1]
                    );
                }
            }
        }
        Ok(out)
    }
}

fn strided(values: Vec<f64>, cap: usize) -> Vec<f64> {
    if values.len() <= cap {
        return values;
    }
    let step = values.len().div_ceil(cap);
    values.into_iter().step_by(step).collect()
}
