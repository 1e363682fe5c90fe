//! End-to-end training, evaluation, sweeps and persistence.

mod config;
mod dataset;
mod eval;
mod model;
mod streams;
mod train;

use std::path::Path;

pub use config::{CvSection, DataSection, OlsSection, PipelineConfig, ScatterSection, SweepSection};
pub use dataset::{
    encode_cifar_batch, load_cifar10, load_cifar10_test, load_image_folder, parse_cifar_batch, subsample_balanced,
    synthetic_dataset, write_cifar_dir, Dataset, FolderReport, Split, CIFAR_CLASSES, CIFAR_RECORD,
};
pub use eval::{evaluate, sweep_sizes, ClassMetrics, EvalReport, SizeAverage, SweepCell, SweepReport};
pub use model::{
    load_model, save_model, Manifest, PcaLayerMeta, PipelineModel, StageDims, StreamMeta, MODEL_MAGIC,
    MODEL_VERSION,
};
pub use streams::{build_stream_layouts, pca_header, Reduction, StreamLayout};
pub use train::{train_pipeline, LayerCheck, StageTiming, TrainReport, PCA_RESPONSE};

use crate::error::{Result, ShdlError};

fn folder(path: &str, cfg: &DataSection) -> Result<Dataset> {
    let size = cfg.image_size.unwrap_or([128, 128]);
    let exclude: Vec<&str> = cfg.exclude_classes.iter().map(String::as_str).collect();
    let (ds, report) = load_image_folder(Path::new(path), (size[0], size[1]), &exclude)?;
    for (name, n) in &report.per_class {
        log::info!("{name}: {n} images");
    }
    Ok(ds)
}

/// Training split named by the config, subsampled when requested.
pub fn prepare_train(config: &PipelineConfig) -> Result<Dataset> {
    let d = &config.data;
    let full = if let Some(dir) = &d.cifar_dir {
        load_cifar10(Path::new(dir))?.0
    } else if let Some(root) = &d.image_folder {
        folder(root, d)?
    } else {
        return Err(ShdlError::Config("set data.cifar_dir or data.image_folder".into()));
    };
    match d.train_per_class {
        Some(n) => subsample_balanced(&full, n, config.seed),
        None => Ok(full),
    }
}

/// Test split named by the config, truncated to `data.test_limit`.
pub fn prepare_test(config: &PipelineConfig) -> Result<Dataset> {
    let d = &config.data;
    let mut test = if let Some(dir) = &d.cifar_dir {
        load_cifar10_test(Path::new(dir))?
    } else if let Some(root) = &d.test_folder {
        let mut t = folder(root, d)?;
        t.split = Split::Test;
        t
    } else {
        return Err(ShdlError::Config("set data.cifar_dir or data.test_folder".into()));
    };
    if let Some(limit) = d.test_limit {
        let keep: Vec<usize> = (0..test.len().min(limit)).collect();
        test = test.subset(&keep);
    }
    Ok(test)
}
