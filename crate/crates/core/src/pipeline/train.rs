//! Training orchestration and feature extraction.

use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError, StageExt};
use crate::ols::{ols_select, reduce_columns, Normalizer};
use crate::par;
use crate::pcanet::{train_pcanet_stack, CvCurve, StreamInput};
use crate::scatter::{FeatureHeader, LogParamSelection, Scatterer};
use crate::svm::{CrossValidator, SvmModel, SvmTrainReport};
use crate::tensor::ImageTensor;

use super::config::PipelineConfig;
use super::dataset::Dataset;
use super::model::{Manifest, PipelineModel, StageDims};
use super::streams::{build_stream_layouts, pca_header, StreamLayout};

pub const PCA_RESPONSE: &str = "sign(y)*ln(1+|y|/k)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Orthonormality of one PCA layer, measured before quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub stream: String,
    pub layer: String,
    pub filters: usize,
    pub optimal_count: usize,
    pub log_param: f64,
    pub orthonormality_error: f64,
}

/// Run diagnostics. Never written to the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub timings: Vec<StageTiming>,
    pub log_params: Option<LogParamSelection>,
    pub layers: Vec<LayerCheck>,
    pub cv_curves: Vec<CvCurve>,
    pub ols_truncated: bool,
    pub svm: SvmTrainReport,
}

impl TrainReport {
    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }
}

fn scatter_image(
    scatterer: &Scatterer,
    streams: &[StreamLayout],
    image: &ImageTensor,
) -> Result<(Vec<f32>, Vec<Array3<f64>>)> {
    let f = scatterer.transform(image)?;
    let flat = f.maps.iter().flat_map(|m| m.values.iter().map(|&v| v as f32)).collect();
    let inputs = streams.iter().map(|s| s.gather(&f)).collect::<Result<Vec<_>>>()?;
    Ok((flat, inputs))
}

fn write_row(row: &mut [f64], scatter: &[f32], y3: &[&Array3<f64>], y4: &[&Array3<f64>]) {
    let mut pos = 0;
    for &v in scatter {
        row[pos] = f64::from(v);
        pos += 1;
    }
    for y in y3.iter().chain(y4) {
        for &v in y.iter() {
            row[pos] = v;
            pos += 1;
        }
    }
    debug_assert_eq!(pos, row.len());
}

fn normalize_in_place(x: &mut Array2<f64>, norm: &Normalizer) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        for (j, v) in row.iter_mut().enumerate() {
            let s = norm.stds[j];
            *v = if s == 0.0 { 0.0 } else { (*v - norm.means[j]) / s };
        }
    }
}

struct Clock {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Trains every stage on `train` and returns the quantized model.
pub fn train_pipeline(config: &PipelineConfig, train: &Dataset) -> Result<(PipelineModel, TrainReport)> {
    config.validate().stage("config")?;
    if train.is_empty() {
        return Err(ShdlError::Validation("empty training set".into())).stage("data");
    }
    train.validate().stage("data")?;
    let first = &train.images[0];
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let labels = &train.labels;
    let n = train.len();
    let mut clock = Clock {
        start: Instant::now(),
        timings: Vec::new(),
    };

    let mut scatterer = Scatterer::new(config.scatter_config()).stage("scatter-k")?;
    let log_params = if config.scatter.select_k {
        Some(scatterer.select_log_params(&train.images).stage("scatter-k")?)
    } else {
        None
    };
    clock.lap("scatter-k");

    let streams = build_stream_layouts(
        &scatterer.layout(c, (h, w)),
        scatterer.config().num_resolutions(),
        config.pca.max_input_channels,
    )
    .stage("scatter")?;
    let per_image = par::try_map(&train.images, |im| scatter_image(&scatterer, &streams, im)).stage("scatter")?;
    let scatter_dim = per_image[0].0.len();
    let mut rows = Vec::with_capacity(n);
    let mut stream_inputs: Vec<StreamInput> = streams
        .iter()
        .map(|s| StreamInput {
            name: s.name.clone(),
            maps: Vec::with_capacity(n),
        })
        .collect();
    for (row, inputs) in per_image {
        rows.push(row);
        for (si, x) in inputs.into_iter().enumerate() {
            stream_inputs[si].maps.push(x);
        }
    }
    clock.lap("scatter");

    let cv = CrossValidator::new(config.cv.folds, config.seed);
    let (mut stack, training) =
        train_pcanet_stack(&stream_inputs, labels, &config.pca, &config.svm, &cv, config.seed).stage("pca")?;
    drop(stream_inputs);
    let mut layers = Vec::new();
    for s in &stack.streams {
        for (tag, l) in [("L3", &s.layer3), ("L4", &s.layer4)] {
            layers.push(LayerCheck {
                stream: s.name.clone(),
                layer: tag.into(),
                filters: l.filter_count(),
                optimal_count: l.optimal_count,
                log_param: l.log_param,
                orthonormality_error: l.orthonormality_error(),
            });
        }
    }
    let l3_dim: usize = training.iter().map(|t| t.layer3_outputs[0].len()).sum();
    let l4_dim: usize = training.iter().map(|t| t.layer4_outputs[0].len()).sum();
    let feature_dim = scatter_dim + l3_dim + l4_dim;
    clock.lap("pca");

    let mut table = Array2::<f64>::zeros((n, feature_dim));
    for (i, (mut out, scatter)) in table.axis_iter_mut(Axis(0)).zip(rows).enumerate() {
        let y3: Vec<&Array3<f64>> = training.iter().map(|t| &t.layer3_outputs[i]).collect();
        let y4: Vec<&Array3<f64>> = training.iter().map(|t| &t.layer4_outputs[i]).collect();
        write_row(out.as_slice_mut().expect("row-major"), &scatter, &y3, &y4);
    }
    let cv_curves: Vec<CvCurve> = training.into_iter().flat_map(|t| t.curves).collect();
    clock.lap("concat");

    let norm = Normalizer::fit(table.view()).stage("normalize")?;
    normalize_in_place(&mut table, &norm);
    clock.lap("normalize");

    let budget = config.ols.budget.min(feature_dim);
    let selection = ols_select(table.view(), labels, budget).stage("ols")?;
    let reduced = reduce_columns(table.view(), &selection.union).stage("ols")?;
    drop(table);
    let ols_truncated = selection.truncated;
    clock.lap("ols");

    let (mut svm, svm_report) = SvmModel::train(reduced.view(), labels, &config.svm).stage("svm")?;
    clock.lap("svm");

    stack.quantize();
    let mut normalizer = Normalizer {
        means: selection.union.iter().map(|&j| norm.means[j]).collect(),
        stds: selection.union.iter().map(|&j| norm.stds[j]).collect(),
        excluded: Vec::new(),
    };
    normalizer.excluded = (0..normalizer.stds.len()).filter(|&p| normalizer.stds[p] == 0.0).collect();
    normalizer.quantize();
    svm.quantize();

    let dims = vec![
        StageDims {
            stage: "scatter".into(),
            input: c * h * w,
            output: scatter_dim,
        },
        StageDims {
            stage: "pca".into(),
            input: scatter_dim,
            output: feature_dim,
        },
        StageDims {
            stage: "concat".into(),
            input: feature_dim,
            output: feature_dim,
        },
        StageDims {
            stage: "normalize".into(),
            input: feature_dim,
            output: feature_dim,
        },
        StageDims {
            stage: "ols".into(),
            input: feature_dim,
            output: selection.union.len(),
        },
        StageDims {
            stage: "svm".into(),
            input: svm.dim(),
            output: svm.classes.len(),
        },
    ];
    let manifest = Manifest {
        config: config.clone(),
        scatter: scatterer.config().clone(),
        input_shape: [c, h, w],
        class_names: train.class_names.clone(),
        streams,
        pca: PipelineModel::stream_meta(&stack),
        feature_dim,
        selected: selection.union.clone(),
        ols: selection,
        constant_selected: normalizer.excluded.clone(),
        svm_classes: svm.classes.clone(),
        svm_gamma: svm.gamma,
        svm_c: svm.c,
        dimensions: dims,
        dataset_hash: train.content_hash(),
        train_samples: n,
        seed: config.seed,
        pca_response: PCA_RESPONSE.into(),
    };
    let model = PipelineModel {
        manifest,
        pca: stack,
        normalizer,
        svm,
    };
    Ok((
        model,
        TrainReport {
            timings: clock.timings,
            log_params,
            layers,
            cv_curves,
            ols_truncated,
            svm: svm_report,
        },
    ))
}

impl PipelineModel {
    fn scatterer(&self) -> Result<Scatterer> {
        Scatterer::new(self.manifest.scatter.clone())
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let [c, h, w] = self.manifest.input_shape;
        if (image.channels(), image.height(), image.width()) != (c, h, w) {
            return Err(ShdlError::Dimension(format!(
                "model expects {c}x{h}x{w} images, got {}x{}x{}",
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn full_row(&self, scatterer: &Scatterer, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_image(image)?;
        let (scatter, inputs) = scatter_image(scatterer, &self.manifest.streams, image)?;
        let outs = self.pca.transform(&inputs)?;
        let y3: Vec<&Array3<f64>> = outs.iter().map(|o| &o.0).collect();
        let y4: Vec<&Array3<f64>> = outs.iter().map(|o| &o.1).collect();
        let mut row = vec![0.0; self.manifest.feature_dim];
        let got = scatter.len() + y3.iter().chain(&y4).map(|y| y.len()).sum::<usize>();
        if got != row.len() {
            return Err(ShdlError::Dimension(format!(
                "feature vector has {got} entries, model expects {}",
                row.len()
            )));
        }
        write_row(&mut row, &scatter, &y3, &y4);
        Ok(row)
    }

    /// Complete concatenated feature vectors (before normalization and selection).
    pub fn full_features(&self, images: &[ImageTensor]) -> Result<Array2<f64>> {
        let scatterer = self.scatterer()?;
        let rows = par::try_map(images, |im| self.full_row(&scatterer, im))?;
        let d = self.manifest.feature_dim;
        let mut out = Array2::zeros((rows.len(), d));
        for (mut o, r) in out.axis_iter_mut(Axis(0)).zip(&rows) {
            o.assign(&ndarray::ArrayView1::from(r));
        }
        Ok(out)
    }

    /// Normalized, OLS-selected features as seen by the SVM.
    pub fn features(&self, images: &[ImageTensor]) -> Result<Array2<f64>> {
        let scatterer = self.scatterer()?;
        let sel = &self.manifest.selected;
        let rows = par::try_map(images, |im| {
            let full = self.full_row(&scatterer, im)?;
            Ok::<_, ShdlError>(
                sel.iter()
                    .enumerate()
                    .map(|(p, &j)| {
                        let s = self.normalizer.stds[p];
                        if s == 0.0 {
                            0.0
                        } else {
                            (full[j] - self.normalizer.means[p]) / s
                        }
                    })
                    .collect::<Vec<f64>>(),
            )
        })?;
        let mut out = Array2::zeros((rows.len(), sel.len()));
        for (mut o, r) in out.axis_iter_mut(Axis(0)).zip(&rows) {
            o.assign(&ndarray::ArrayView1::from(r));
        }
        Ok(out)
    }

    /// Predicted class indices, in batches to bound memory.
    pub fn predict(&self, images: &[ImageTensor]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(512) {
            let x = self.features(chunk)?;
            out.extend(self.svm.predict(x.view())?.labels);
        }
        Ok(out)
    }

    /// Descriptors of every concatenated feature map.
    pub fn feature_header(&self) -> Result<FeatureHeader> {
        let scatterer = self.scatterer()?;
        let [c, h, w] = self.manifest.input_shape;
        let mut header = FeatureHeader::default();
        for (p, (gh, gw)) in scatterer.layout(c, (h, w)) {
            header.push(p.to_string(), gh, gw);
        }
        let k3: Vec<usize> = self.pca.streams.iter().map(|s| s.layer3.optimal_count).collect();
        let k4: Vec<usize> = self.pca.streams.iter().map(|s| s.layer4.optimal_count).collect();
        header.extend(&pca_header(&self.manifest.streams, "L3", &k3));
        header.extend(&pca_header(&self.manifest.streams, "L4", &k4));
        Ok(header)
    }

    /// `true` when every stage's input width equals the previous output.
    pub fn dimension_chain_consistent(&self) -> bool {
        let d = &self.manifest.dimensions;
        let [c, h, w] = self.manifest.input_shape;
        d.first().is_some_and(|s| s.input == c * h * w)
            && d.windows(2).all(|p| p[0].output == p[1].input)
            && d.last().is_some_and(|s| s.output == self.svm.classes.len())
    }
}
