//! Pipeline configuration: TOML with dotted sections and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::pcanet::PcaConfig;
use crate::scatter::ScatterConfig;
use crate::svm::SvmParams;

/// Scattering section, flattened to the two resolutions the pipeline uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterSection {
    pub factor_r1: f64,
    pub factor_r2: f64,
    pub j_r1: usize,
    pub j_r2: usize,
    pub pool_factor: usize,
    pub filters: String,
    pub select_k: bool,
    pub k_grid_min: f64,
    pub k_grid_max: f64,
    pub k_grid_count: usize,
    pub k_max_samples: usize,
    /// Fixed log parameters, indexed by `scale - 1`; used when `select_k` is off.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_l1_r1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_l1_r2: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_l2_r1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_l2_r2: Option<Vec<f64>>,
}

impl Default for ScatterSection {
    fn default() -> Self {
        let base = ScatterConfig::default();
        Self {
            factor_r1: base.resolution_factors[0],
            factor_r2: base.resolution_factors[1],
            j_r1: base.scales[0],
            j_r2: base.scales[1],
            pool_factor: base.pool_factor,
            filters: base.filters,
            select_k: base.select_k,
            k_grid_min: base.k_grid_min,
            k_grid_max: base.k_grid_max,
            k_grid_count: base.k_grid_count,
            k_max_samples: base.k_max_samples,
            k_l1_r1: None,
            k_l1_r2: None,
            k_l2_r1: None,
            k_l2_r2: None,
        }
    }
}

impl ScatterSection {
    pub fn to_config(&self) -> ScatterConfig {
        let mut cfg = ScatterConfig::with_scales(vec![self.factor_r1, self.factor_r2], vec![self.j_r1, self.j_r2]);
        cfg.pool_factor = self.pool_factor;
        cfg.filters = self.filters.clone();
        cfg.select_k = self.select_k;
        cfg.k_grid_min = self.k_grid_min;
        cfg.k_grid_max = self.k_grid_max;
        cfg.k_grid_count = self.k_grid_count;
        cfg.k_max_samples = self.k_max_samples;
        let fixed = [
            [&self.k_l1_r1, &self.k_l1_r2],
            [&self.k_l2_r1, &self.k_l2_r2],
        ];
        for (layer, per_res) in [&mut cfg.k_l1, &mut cfg.k_l2].into_iter().zip(fixed) {
            for (slot, v) in layer.iter_mut().zip(per_res) {
                if let Some(v) = v {
                    *slot = v.clone();
                }
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsSection {
    /// Maximum selected features per class.
    pub budget: usize,
}

impl Default for OlsSection {
    fn default() -> Self {
        Self { budget: 1030 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the CIFAR-10 binary batches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cifar_dir: Option<String>,
    /// Class-per-directory image root, used instead of CIFAR when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_folder: Option<String>,
    /// Held-out class-per-directory root for evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_folder: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[usize; 2]>,
    pub exclude_classes: Vec<String>,
    /// Balanced training subsample; the whole training split when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    /// Evaluate on the first `test_limit` test images only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Total training-set sizes, ascending.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 5000, 10000, 20000, 50000],
            seeds: vec![0, 1, 2],
        }
    }
}

/// Every setting of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scatter: ScatterSection,
    pub pca: PcaConfig,
    pub ols: OlsSection,
    pub svm: SvmParams,
    pub cv: CvSection,
    pub data: DataSection,
    pub sweep: SweepSection,
}

impl PipelineConfig {
    /// Reduced preset meant to finish in minutes.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.pca.k_l3 = 40;
        c.pca.k_l4 = 60;
        c.pca.patch_size = 5;
        c.ols.budget = 32;
        c.data.train_per_class = Some(50);
        c.sweep.sizes = vec![500, 2000];
        c
    }

    /// Named preset: `desk` or `full`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::default()),
            other => Err(ShdlError::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn scatter_config(&self) -> ScatterConfig {
        self.scatter.to_config()
    }

    pub fn validate(&self) -> Result<()> {
        self.scatter_config().validate()?;
        self.pca.validate()?;
        self.svm
            .validate()
            .map_err(|e| ShdlError::Config(e.to_string()))?;
        if self.ols.budget == 0 {
            return Err(ShdlError::Config("ols.budget must be positive".into()));
        }
        if self.cv.folds < 2 {
            return Err(ShdlError::Config("cv.folds must be at least 2".into()));
        }
        if self.sweep.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ShdlError::Config("sweep.sizes must be strictly ascending".into()));
        }
        Ok(())
    }

    /// Parses TOML text, then applies `key=value` overrides with dotted keys.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ShdlError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ShdlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` starts from the desk preset.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ShdlError::Config(format!("{}: {e}", p.display())))?,
            None => Self::desk().to_toml()?,
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ShdlError::Config(e.to_string()))
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ShdlError::Config(format!("override {item:?} is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ShdlError::Config(format!("{p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [PipelineConfig::default(), PipelineConfig::desk()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(PipelineConfig::from_toml(&text, &[]).unwrap(), cfg);
        }
    }

    #[test]
    fn shipped_files_match_presets() {
        let desk = PipelineConfig::from_toml(include_str!("../../../../configs/desk.toml"), &[]).unwrap();
        assert_eq!(desk, PipelineConfig::desk());
        let full = PipelineConfig::from_toml(include_str!("../../../../configs/full.toml"), &[]).unwrap();
        assert_eq!(full, PipelineConfig::default());
    }

    #[test]
    fn desk_preset_values() {
        let d = PipelineConfig::desk();
        assert_eq!((d.pca.k_l3, d.pca.k_l4, d.ols.budget, d.pca.patch_size), (40, 60, 32, 5));
        assert!(d.data.train_per_class.unwrap() * 10 <= 2000);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = PipelineConfig::from_toml(
            "seed = 3\n[pca]\nk_l3 = 12\n",
            &["scatter.j_r1=4".into(), "svm.gamma=0.5".into(), "seed=9".into(), "data.cifar_dir=/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.pca.k_l3, 12);
        assert_eq!(cfg.scatter.j_r1, 4);
        assert_eq!(cfg.scatter_config().k_l1[0].len(), 3);
        assert_eq!(cfg.svm.gamma, Some(0.5));
        assert_eq!(cfg.data.cifar_dir.as_deref(), Some("/x"));
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        for (text, ov) in [
            ("bogus = 1", vec![]),
            ("", vec!["pca.k_l3=0".to_string()]),
            ("", vec!["scatter.j_r2=1".to_string()]),
            ("", vec!["novalue".to_string()]),
            ("", vec!["svm.c=-1".to_string()]),
        ] {
            match PipelineConfig::from_toml(text, &ov) {
                Err(e @ ShdlError::Config(_)) => assert_eq!(e.exit_code(), 2),
                other => panic!("{text} {ov:?}: {other:?}"),
            }
        }
    }
}
