//! Stacked PCA filter banks learned on scattering streams, with filter
//! count and log parameter chosen by cross-validated SVM accuracy.

mod layer;

use std::fmt::Write as _;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::par;
use crate::svm::{cross_validate, CrossValidator, SvmParams};

pub use layer::{
    convolve_bank, extract_patches, learn_pca_filters, pooled_descriptor, signed_log, PatchMatrix,
    PcaLayerModel, RANK_TOLERANCE,
};

/// PCA stack settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub patch_size: usize,
    pub k_l3: usize,
    pub k_l4: usize,
    pub patch_stride: usize,
    pub max_patches_per_image: usize,
    /// Streams with more scattering channels are averaged down (see pipeline).
    pub max_input_channels: usize,
    /// Filter-count candidates are the multiples of this step up to `K`.
    pub count_step: usize,
    pub log_grid: Vec<f64>,
    /// Log parameter used when optimization is disabled.
    pub default_log_param: f64,
    pub optimize: bool,
    /// Side of the average-pooled grid fed to the CV classifier.
    pub cv_pool: usize,
    /// Stratified subsample size for layer-optimization CV.
    pub cv_max_samples: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            k_l3: 100,
            k_l4: 200,
            patch_stride: 1,
            max_patches_per_image: 500,
            max_input_channels: 150,
            count_step: 10,
            log_grid: vec![0.1, 0.25, 0.5, 1.0, 1.5, 1.7, 1.8, 1.9, 2.0, 3.0, 5.0, 7.0, 10.0],
            default_log_param: 1.0,
            optimize: true,
            cv_pool: 4,
            cv_max_samples: 1000,
        }
    }
}

impl PcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return Err(ShdlError::Config(format!(
                "pca.patch_size must be odd and positive, got {}",
                self.patch_size
            )));
        }
        if self.k_l3 == 0 || self.k_l4 == 0 {
            return Err(ShdlError::Config("pca filter counts must be positive".into()));
        }
        if self.patch_stride == 0 || self.max_patches_per_image == 0 || self.max_input_channels == 0 {
            return Err(ShdlError::Config("pca stride and caps must be positive".into()));
        }
        if self.count_step == 0 || self.cv_pool == 0 || self.cv_max_samples == 0 {
            return Err(ShdlError::Config("pca CV settings must be positive".into()));
        }
        if self.log_grid.is_empty() || self.log_grid.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(ShdlError::Config("pca.log_grid must hold positive values".into()));
        }
        if !(self.default_log_param > 0.0 && self.default_log_param.is_finite()) {
            return Err(ShdlError::Config("pca.default_log_param must be positive".into()));
        }
        Ok(())
    }
}

/// Cross-validation accuracy per candidate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub stream: String,
    pub layer: String,
    pub parameter: String,
    pub candidates: Vec<f64>,
    pub fold_accuracies: Vec<Vec<f64>>,
    pub mean_accuracy: Vec<f64>,
    pub best: usize,
}

impl CvCurve {
    pub fn best_value(&self) -> f64 {
        self.candidates[self.best]
    }

    /// `candidate,fold1..foldN,mean`.
    pub fn to_csv(&self) -> String {
        let folds = self.fold_accuracies.first().map_or(0, Vec::len);
        let mut s = String::from("candidate");
        for f in 1..=folds {
            let _ = write!(s, ",fold{f}");
        }
        s.push_str(",mean\n");
        for (i, c) in self.candidates.iter().enumerate() {
            let _ = write!(s, "{c}");
            for a in &self.fold_accuracies[i] {
                let _ = write!(s, ",{a:.6}");
            }
            let _ = writeln!(s, ",{:.6}", self.mean_accuracy[i]);
        }
        s
    }
}

fn check_labels(labels: &[usize]) -> Result<()> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ShdlError::Protocol("layer optimization needs at least 2 classes".into()));
    }
    Ok(())
}

fn scan<F>(candidates: &[f64], features_for: F, labels: &[usize], svm: &SvmParams, cv: &CrossValidator) -> Result<CvCurve>
where
    F: Fn(f64) -> Result<Array2<f64>>,
{
    if candidates.is_empty() {
        return Err(ShdlError::Parameter("empty candidate list".into()));
    }
    check_labels(labels)?;
    let mut fold_accuracies = Vec::with_capacity(candidates.len());
    let mut mean_accuracy = Vec::with_capacity(candidates.len());
    let mut best = 0;
    for (i, &c) in candidates.iter().enumerate() {
        let x = features_for(c)?;
        let r = cross_validate(x.view(), labels, svm, cv)?;
        if r.mean_accuracy > mean_accuracy.get(best).copied().unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
        fold_accuracies.push(r.fold_accuracies);
        mean_accuracy.push(r.mean_accuracy);
    }
    Ok(CvCurve {
        stream: String::new(),
        layer: String::new(),
        parameter: String::new(),
        candidates: candidates.to_vec(),
        fold_accuracies,
        mean_accuracy,
        best,
    })
}

/// Picks the filter count with the highest CV accuracy. Candidates are
/// scanned in ascending order and ties go to the smaller count.
pub fn optimize_filter_count<F>(
    features_for: F,
    labels: &[usize],
    candidates: &[usize],
    svm: &SvmParams,
    cv: &CrossValidator,
) -> Result<(usize, CvCurve)>
where
    F: Fn(usize) -> Result<Array2<f64>>,
{
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.first() == Some(&0) {
        return Err(ShdlError::Parameter("filter-count candidates must be positive".into()));
    }
    let as_f: Vec<f64> = sorted.iter().map(|&c| c as f64).collect();
    let mut curve = scan(&as_f, |c| features_for(c as usize), labels, svm, cv)?;
    curve.parameter = "filters".into();
    Ok((sorted[curve.best], curve))
}

/// Picks the log parameter with the highest CV accuracy; ties go to the
/// smaller value.
pub fn optimize_pca_log_param<F>(
    features_for: F,
    labels: &[usize],
    grid: &[f64],
    svm: &SvmParams,
    cv: &CrossValidator,
) -> Result<(f64, CvCurve)>
where
    F: Fn(f64) -> Result<Array2<f64>>,
{
    if grid.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(ShdlError::Parameter("log parameters must be positive".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut curve = scan(&sorted, features_for, labels, svm, cv)?;
    curve.parameter = "log_k".into();
    Ok((curve.best_value(), curve))
}

/// Multiples of `step` up to `k`, plus `k` itself.
pub fn count_candidates(k: usize, step: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (1..).map(|i| i * step).take_while(|&c| c <= k).collect();
    if v.last() != Some(&k) {
        v.push(k);
    }
    v
}

/// Seeded stratified subsample of at most `cap` indices (ascending),
/// keeping at least `min_per_class` of each class where available.
pub fn stratified_subsample(labels: &[usize], cap: usize, min_per_class: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if n <= cap {
        return (0..n).collect();
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cap);
    for class in classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        let share = (cap * members.len()) / n;
        let take = share.max(min_per_class).min(members.len());
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    out
}

/// One scattering stream: one multi-channel map per training image.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamInput {
    pub name: String,
    pub maps: Vec<Array3<f64>>,
}

/// Both PCA layers of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamModel {
    pub name: String,
    pub layer3: PcaLayerModel,
    pub layer4: PcaLayerModel,
}

/// PCA layers of every stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PcaStack {
    pub streams: Vec<StreamModel>,
}

impl PcaStack {
    /// Layer outputs `(ŷ₃, ŷ₄)` of one image, one input map per stream.
    pub fn transform(&self, inputs: &[Array3<f64>]) -> Result<Vec<(Array3<f64>, Array3<f64>)>> {
        if inputs.len() != self.streams.len() {
            return Err(ShdlError::Dimension(format!(
                "{} stream inputs for {} streams",
                inputs.len(),
                self.streams.len()
            )));
        }
        self.streams
            .iter()
            .zip(inputs)
            .map(|(s, x)| {
                let y3 = s.layer3.forward(x.view())?;
                let y4 = s.layer4.forward(y3.view())?;
                Ok((y3, y4))
            })
            .collect()
    }

    pub fn quantize(&mut self) {
        for s in &mut self.streams {
            s.layer3.quantize();
            s.layer4.quantize();
        }
    }
}

/// Training-time artefacts of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTraining {
    pub curves: Vec<CvCurve>,
    pub layer3_outputs: Vec<Array3<f64>>,
    pub layer4_outputs: Vec<Array3<f64>>,
    /// Requested filter counts after clamping to the patch dimension.
    pub layer3_requested: usize,
    pub layer4_requested: usize,
}

struct LayerContext<'a> {
    stream: &'a str,
    layer: &'static str,
    labels: &'a [usize],
    cv_subset: &'a [usize],
    config: &'a PcaConfig,
    svm: &'a SvmParams,
    cv: &'a CrossValidator,
    seed: u64,
}

fn train_layer(
    ctx: &LayerContext<'_>,
    maps: &[Array3<f64>],
    k_max: usize,
) -> Result<(PcaLayerModel, Vec<CvCurve>, Vec<Array3<f64>>, usize)> {
    let cfg = ctx.config;
    let s = cfg.patch_size;
    let x = extract_patches(maps, (s, s), cfg.patch_stride, Some(cfg.max_patches_per_image), ctx.seed)?;
    let k = k_max.min(x.data.nrows()).min(x.data.ncols());
    if k < k_max {
        log::warn!(
            "{}/{}: filter count clamped from {k_max} to {k}",
            ctx.stream,
            ctx.layer
        );
    }
    let mut model = learn_pca_filters(&x, k)?;
    drop(x);
    let mut curves = Vec::new();

    let label = |c: &mut CvCurve| {
        c.stream = ctx.stream.to_string();
        c.layer = ctx.layer.to_string();
    };

    if cfg.optimize {
        let sub_labels: Vec<usize> = ctx.cv_subset.iter().map(|&i| ctx.labels[i]).collect();
        let responses = par::try_map(ctx.cv_subset, |&i| convolve_bank(maps[i].view(), &model, k))?;
        let g = cfg.cv_pool;
        let raw: Vec<Vec<f64>> = par::map(&responses, |y| pooled_descriptor(y.view(), g));
        let width = g * g;
        let (best_count, mut curve) = optimize_filter_count(
            |c| {
                Ok(Array2::from_shape_fn((raw.len(), c * width), |(r, col)| raw[r][col]))
            },
            &sub_labels,
            &count_candidates(k, cfg.count_step),
            ctx.svm,
            ctx.cv,
        )?;
        label(&mut curve);
        curves.push(curve);

        let grid: Vec<f64> = cfg.log_grid.iter().map(|&v| v as f32 as f64).collect();
        let (best_k, mut curve) = optimize_pca_log_param(
            |lk| {
                let rows = par::map(&responses, |y| {
                    let y = signed_log(&y.slice(s![..best_count, .., ..]).to_owned(), lk);
                    pooled_descriptor(y.view(), g)
                });
                Ok(Array2::from_shape_fn((rows.len(), best_count * width), |(r, col)| rows[r][col]))
            },
            &sub_labels,
            &grid,
            ctx.svm,
            ctx.cv,
        )?;
        label(&mut curve);
        curves.push(curve);
        model.optimal_count = best_count;
        model.log_param = best_k;
    } else {
        model.optimal_count = k;
        model.log_param = cfg.default_log_param as f32 as f64;
    }

    let outputs = par::try_map(maps, |m| model.forward(m.view()))?;
    Ok((model, curves, outputs, k))
}

/// Learns layer 3 on each stream, optimizes it, then learns layer 4 on
/// the optimized layer-3 outputs. Streams train in parallel.
pub fn train_pcanet_stack(
    streams: &[StreamInput],
    labels: &[usize],
    config: &PcaConfig,
    svm: &SvmParams,
    cv: &CrossValidator,
    seed: u64,
) -> Result<(PcaStack, Vec<StreamTraining>)> {
    config.validate()?;
    if streams.is_empty() {
        return Err(ShdlError::Validation("no scattering streams".into()));
    }
    for s in streams {
        if s.maps.len() != labels.len() {
            return Err(ShdlError::Dimension(format!(
                "stream {} has {} maps for {} labels",
                s.name,
                s.maps.len(),
                labels.len()
            )));
        }
    }
    if config.optimize {
        check_labels(labels)?;
    }
    let cv_subset = stratified_subsample(labels, config.cv_max_samples, cv.folds, seed);

    let results = par::try_map_range(streams.len(), |si| {
        let stream = &streams[si];
        let stream_seed = seed.wrapping_add(1 + si as u64);
        let mut ctx = LayerContext {
            stream: &stream.name,
            layer: "L3",
            labels,
            cv_subset: &cv_subset,
            config,
            svm,
            cv,
            seed: stream_seed,
        };
        let (layer3, mut curves, out3, req3) = train_layer(&ctx, &stream.maps, config.k_l3)?;
        ctx.layer = "L4";
        ctx.seed = stream_seed.wrapping_mul(31);
        let s = config.patch_size;
        let k4 = config.k_l4.min(s * s * layer3.optimal_count);
        let (layer4, curves4, out4, req4) = train_layer(&ctx, &out3, k4)?;
        curves.extend(curves4);
        Ok::<_, ShdlError>((
            StreamModel {
                name: stream.name.clone(),
                layer3,
                layer4,
            },
            StreamTraining {
                curves,
                layer3_outputs: out3,
                layer4_outputs: out4,
                layer3_requested: req3,
                layer4_requested: req4,
            },
        ))
    })?;
    let (models, training): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((PcaStack { streams: models }, training))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn candidates_cover_multiples_and_k() {
        assert_eq!(count_candidates(40, 10), vec![10, 20, 30, 40]);
        assert_eq!(count_candidates(45, 10), vec![10, 20, 30, 40, 45]);
        assert_eq!(count_candidates(6, 10), vec![6]);
    }

    #[test]
    fn singleton_candidates() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((20, 3), |_| rng.random::<f64>());
        let cv = CrossValidator::default();
        let svm = SvmParams::default();
        let (k, curve) = optimize_filter_count(|_| Ok(x.clone()), &labels, &[7], &svm, &cv).unwrap();
        assert_eq!(k, 7);
        assert_eq!(curve.candidates, vec![7.0]);
        let (lk, _) = optimize_pca_log_param(|_| Ok(x.clone()), &labels, &[2.5], &svm, &cv).unwrap();
        assert_eq!(lk, 2.5);
    }

    #[test]
    fn too_few_samples_is_a_protocol_error() {
        let labels = vec![0, 0, 0, 1, 1, 1];
        let x = Array2::<f64>::zeros((6, 2));
        let r = optimize_filter_count(
            |_| Ok(x.clone()),
            &labels,
            &[1],
            &SvmParams::default(),
            &CrossValidator::default(),
        );
        assert!(matches!(r, Err(ShdlError::Protocol(_))));
    }

    #[test]
    fn informative_directions_keep_count_small() {
        // Only the first two feature columns carry the label.
        let n = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 40), |(i, j)| {
            let noise = rng.random::<f64>() - 0.5;
            if j < 2 {
                labels[i] as f64 * 2.0 + 0.3 * noise
            } else {
                3.0 * noise
            }
        });
        let cv = CrossValidator::default();
        let svm = SvmParams::default();
        let cands = [2, 10, 20, 30, 40];
        let (k, curve) =
            optimize_filter_count(|c| Ok(x.slice(s![.., ..c]).to_owned()), &labels, &cands, &svm, &cv).unwrap();
        assert_eq!(k, 2);
        // Re-scan oracle: nothing beats the chosen candidate.
        for (i, &c) in cands.iter().enumerate() {
            let r = cross_validate(x.slice(s![.., ..c]).view(), &labels, &svm, &cv).unwrap();
            assert_eq!(r.mean_accuracy, curve.mean_accuracy[i]);
            assert!(curve.mean_accuracy[curve.best] >= r.mean_accuracy);
        }
    }

    #[test]
    fn subsample_is_stratified_and_deterministic() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let a = stratified_subsample(&labels, 200, 5, 3);
        assert_eq!(a, stratified_subsample(&labels, 200, 5, 3));
        assert_eq!(a.len(), 200);
        for c in 0..10 {
            assert_eq!(a.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
    }

    #[test]
    fn stack_trains_and_keeps_invariants() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let maps: Vec<Array3<f64>> = labels
            .iter()
            .map(|&l| {
                Array3::from_shape_fn((3, 8, 8), |(c, i, j)| {
                    let wave = if l == 0 { (i as f64 * 0.8).sin() } else { (j as f64 * 0.8).sin() };
                    wave * (c + 1) as f64 + 0.2 * rng.random::<f64>()
                })
            })
            .collect();
        let streams = vec![
            StreamInput {
                name: "a".into(),
                maps: maps.clone(),
            },
            StreamInput {
                name: "b".into(),
                maps: maps.iter().map(|m| m.mapv(|v| v * v)).collect(),
            },
        ];
        let cfg = PcaConfig {
            patch_size: 3,
            k_l3: 8,
            k_l4: 12,
            count_step: 4,
            log_grid: vec![0.5, 2.0],
            ..PcaConfig::default()
        };
        let (stack, training) =
            train_pcanet_stack(&streams, &labels, &cfg, &SvmParams::default(), &CrossValidator::default(), 9).unwrap();
        for (s, t) in stack.streams.iter().zip(&training) {
            assert!(s.layer3.orthonormality_error() < 1e-8);
            assert!(s.layer4.orthonormality_error() < 1e-8);
            assert_eq!(s.layer4.channels, s.layer3.optimal_count);
            assert_eq!(s.layer4.patch_len(), 9 * s.layer3.optimal_count);
            assert!(s.layer4.filter_count() <= 9 * s.layer3.optimal_count);
            assert!((1..=s.layer3.filter_count()).contains(&s.layer3.optimal_count));
            assert_eq!(t.curves.len(), 4);
            assert_eq!(t.layer3_outputs[0].dim(), (s.layer3.optimal_count, 8, 8));
            let again = stack.transform(&[maps[0].clone(), streams[1].maps[0].clone()]).unwrap();
            let idx = if s.name == "a" { 0 } else { 1 };
            if idx == 0 {
                assert_eq!(again[0].0, t.layer3_outputs[0]);
                assert_eq!(again[0].1, t.layer4_outputs[0]);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let c = CvCurve {
            stream: "s".into(),
            layer: "L3".into(),
            parameter: "filters".into(),
            candidates: vec![10.0, 20.0],
            fold_accuracies: vec![vec![0.5; 5], vec![0.75; 5]],
            mean_accuracy: vec![0.5, 0.75],
            best: 1,
        };
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "candidate,fold1,fold2,fold3,fold4,fold5,mean");
        assert_eq!(lines[2], "20,0.750000,0.750000,0.750000,0.750000,0.750000,0.750000");
    }
}
