//! Trained pipeline and its single-file container.
//!
//! Layout, all little-endian:
//! `b"SHDLMODL"`, `u32` version, `u64` manifest length, manifest JSON,
//! `u32` array count, then per array `u32` name length, name, `u32` rank,
//! `u64` dims, `f32` data; finally the SHA-256 of every preceding byte.

use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ShdlError};
use crate::ols::{Normalizer, OlsSelection};
use crate::pcanet::{PcaLayerModel, PcaStack, StreamModel};
use crate::scatter::ScatterConfig;
use crate::svm::SvmModel;

use super::config::PipelineConfig;
use super::streams::StreamLayout;

pub const MODEL_MAGIC: &[u8; 8] = b"SHDLMODL";
pub const MODEL_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Input and output width of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDims {
    pub stage: String,
    pub input: usize,
    pub output: usize,
}

/// Scalar description of one PCA layer; filters travel as arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaLayerMeta {
    pub channels: usize,
    pub patch_size: (usize, usize),
    pub filters: usize,
    pub rank_deficient: usize,
    pub optimal_count: usize,
    pub log_param: f64,
}

impl PcaLayerMeta {
    fn of(m: &PcaLayerModel) -> Self {
        Self {
            channels: m.channels,
            patch_size: m.patch_size,
            filters: m.filter_count(),
            rank_deficient: m.rank_deficient,
            optimal_count: m.optimal_count,
            log_param: m.log_param,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub name: String,
    pub layer3: PcaLayerMeta,
    pub layer4: PcaLayerMeta,
}

/// Everything about a model that is not a float array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    /// Scattering settings with the selected log parameters installed.
    pub scatter: ScatterConfig,
    pub input_shape: [usize; 3],
    pub class_names: Vec<String>,
    pub streams: Vec<StreamLayout>,
    pub pca: Vec<StreamMeta>,
    /// Width of the concatenated feature vector.
    pub feature_dim: usize,
    /// Columns kept by OLS, ascending; the SVM sees them in this order.
    pub selected: Vec<usize>,
    pub ols: OlsSelection,
    /// Positions within `selected` whose training column was constant.
    pub constant_selected: Vec<usize>,
    pub svm_classes: Vec<usize>,
    pub svm_gamma: f64,
    pub svm_c: f64,
    pub dimensions: Vec<StageDims>,
    pub dataset_hash: String,
    pub train_samples: usize,
    pub seed: u64,
    /// Response nonlinearity of the PCA layers.
    pub pca_response: String,
}

/// A trained scattering + PCA + OLS + SVM classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub manifest: Manifest,
    pub pca: PcaStack,
    /// Statistics of the selected columns only.
    pub normalizer: Normalizer,
    pub svm: SvmModel,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ShdlError::ModelLoad(format!("unexpected end of data at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| ShdlError::ModelLoad("length overflow".into()))
    }

    fn array(&mut self) -> Result<(String, ArrayD<f64>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ShdlError::ModelLoad("array name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.len()?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| ShdlError::ModelLoad(format!("{name}: shape overflow")))?;
        let raw = self.take(count.checked_mul(4).ok_or_else(|| ShdlError::ModelLoad("size overflow".into()))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("count matches shape");
        Ok((name, arr))
    }
}

impl PipelineModel {
    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    /// Container bytes. Float arrays are stored as `f32`; the model is
    /// quantized at the end of training so this is lossless.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)
            .map_err(|e| ShdlError::Consistency(format!("manifest encoding: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u32(&mut out, MODEL_VERSION);
        put_u64(&mut out, manifest.len() as u64);
        out.extend_from_slice(&manifest);

        let s = &self.pca.streams;
        put_u32(&mut out, (4 * s.len() + 5) as u32);
        for st in s {
            for (tag, layer) in [("l3", &st.layer3), ("l4", &st.layer4)] {
                let f = &layer.filters;
                put_array(&mut out, &format!("pca/{}/{tag}/filters", st.name), &[f.nrows(), f.ncols()], f.iter().copied());
                put_array(
                    &mut out,
                    &format!("pca/{}/{tag}/eigenvalues", st.name),
                    &[layer.eigenvalues.len()],
                    layer.eigenvalues.iter().copied(),
                );
            }
        }
        let n = &self.normalizer;
        put_array(&mut out, "norm/means", &[n.means.len()], n.means.iter().copied());
        put_array(&mut out, "norm/stds", &[n.stds.len()], n.stds.iter().copied());
        let m = &self.svm;
        put_array(&mut out, "svm/support", &[m.support.nrows(), m.support.ncols()], m.support.iter().copied());
        put_array(
            &mut out,
            "svm/coefficients",
            &[m.coefficients.nrows(), m.coefficients.ncols()],
            m.coefficients.iter().copied(),
        );
        put_array(&mut out, "svm/biases", &[m.biases.len()], m.biases.iter().copied());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(ShdlError::ModelLoad("not a model file (bad magic)".into()));
        }
        if bytes.len() < MODEL_MAGIC.len() + 4 + CHECKSUM_LEN {
            return Err(ShdlError::ModelLoad("checksum failure: file truncated".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(ShdlError::ModelLoad(format!(
                "unsupported model version {version}, expected {MODEL_VERSION}"
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(ShdlError::ModelLoad("checksum failure: file corrupt or truncated".into()));
        }
        let mut r = Reader { bytes: body, pos: 12 };
        let mlen = r.len()?;
        let manifest: Manifest = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| ShdlError::ModelLoad(format!("manifest: {e}")))?;
        let count = r.u32()? as usize;
        let mut arrays = std::collections::BTreeMap::new();
        for _ in 0..count {
            let (name, a) = r.array()?;
            arrays.insert(name, a);
        }
        if r.pos != body.len() {
            return Err(ShdlError::ModelLoad("trailing bytes after arrays".into()));
        }
        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| ShdlError::ModelLoad(format!("missing array {name}")))
        };
        let matrix = |a: ArrayD<f64>, name: &str| -> Result<Array2<f64>> {
            a.into_dimensionality()
                .map_err(|_| ShdlError::ModelLoad(format!("{name} is not a matrix")))
        };

        let mut streams = Vec::new();
        for meta in &manifest.pca {
            let mut layer = |tag: &str, lm: &PcaLayerMeta| -> Result<PcaLayerModel> {
                let fname = format!("pca/{}/{tag}/filters", meta.name);
                let filters = matrix(take(&fname)?, &fname)?;
                let eigenvalues = take(&format!("pca/{}/{tag}/eigenvalues", meta.name))?.into_raw_vec_and_offset().0;
                if filters.nrows() != lm.filters
                    || filters.ncols() != lm.channels * lm.patch_size.0 * lm.patch_size.1
                    || lm.optimal_count > lm.filters
                {
                    return Err(ShdlError::ModelLoad(format!("{fname} disagrees with the manifest")));
                }
                Ok(PcaLayerModel {
                    channels: lm.channels,
                    patch_size: lm.patch_size,
                    filters,
                    eigenvalues,
                    rank_deficient: lm.rank_deficient,
                    optimal_count: lm.optimal_count,
                    log_param: lm.log_param,
                })
            };
            let layer3 = layer("l3", &meta.layer3)?;
            let layer4 = layer("l4", &meta.layer4)?;
            streams.push(StreamModel {
                name: meta.name.clone(),
                layer3,
                layer4,
            });
        }
        let means = take("norm/means")?.into_raw_vec_and_offset().0;
        let stds = take("norm/stds")?.into_raw_vec_and_offset().0;
        let support = matrix(take("svm/support")?, "svm/support")?;
        let coefficients = matrix(take("svm/coefficients")?, "svm/coefficients")?;
        let biases = take("svm/biases")?.into_raw_vec_and_offset().0;
        let k = manifest.selected.len();
        if means.len() != k
            || stds.len() != k
            || support.ncols() != k
            || coefficients.nrows() != manifest.svm_classes.len()
            || coefficients.ncols() != support.nrows()
            || biases.len() != manifest.svm_classes.len()
        {
            return Err(ShdlError::ModelLoad("array shapes disagree with the manifest".into()));
        }
        Ok(Self {
            normalizer: Normalizer {
                means,
                stds,
                excluded: manifest.constant_selected.clone(),
            },
            svm: SvmModel {
                classes: manifest.svm_classes.clone(),
                gamma: manifest.svm_gamma,
                c: manifest.svm_c,
                support,
                coefficients,
                biases,
            },
            pca: PcaStack { streams },
            manifest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub(crate) fn stream_meta(pca: &PcaStack) -> Vec<StreamMeta> {
        pca.streams
            .iter()
            .map(|s| StreamMeta {
                name: s.name.clone(),
                layer3: PcaLayerMeta::of(&s.layer3),
                layer4: PcaLayerMeta::of(&s.layer4),
            })
            .collect()
    }
}

pub fn save_model(model: &PipelineModel, path: &Path) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: &Path) -> Result<PipelineModel> {
    PipelineModel::load(path)
}
