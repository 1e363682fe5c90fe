//! Datasets: CIFAR-10 binaries, class-per-directory image folders,
//! balanced subsampling and a synthetic generator.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ShdlError};
use crate::tensor::ImageTensor;

/// Bytes per CIFAR-10 record: one label byte and three 32x32 planes.
pub const CIFAR_RECORD: usize = 1 + 3 * 1024;
pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];
const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Labelled images with uniform channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(ShdlError::Validation(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(ShdlError::Validation(format!(
                "label {bad} outside {} classes",
                self.num_classes()
            )));
        }
        if let Some(first) = self.images.first() {
            let shape = (first.channels(), first.height(), first.width());
            for (i, im) in self.images.iter().enumerate() {
                if (im.channels(), im.height(), im.width()) != shape {
                    return Err(ShdlError::Validation(format!("image {i} differs in shape")));
                }
                im.validate_finite()?;
            }
        }
        Ok(())
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// SHA-256 over labels and pixel values, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (im, &l) in self.images.iter().zip(&self.labels) {
            h.update((l as u64).to_le_bytes());
            for d in [im.channels(), im.height(), im.width()] {
                h.update((d as u64).to_le_bytes());
            }
            for v in im.data().iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Subset by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            split: self.split,
            source: self.source.clone(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses one CIFAR-10 binary batch. Pixel values are scaled to `[0, 1]`.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(ShdlError::Format {
            offset: whole as u64,
            message: format!(
                "length {} is not a multiple of the {CIFAR_RECORD}-byte record; truncated record starts here",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(ShdlError::Format {
                offset: (r * CIFAR_RECORD) as u64,
                message: format!("label byte {label} exceeds 9"),
            });
        }
        let px = &rec[1..];
        let data = Array3::from_shape_fn((3, 32, 32), |(c, y, x)| f64::from(px[c * 1024 + y * 32 + x]) / 255.0);
        images.push(ImageTensor::from_array(data));
        labels.push(usize::from(label));
    }
    Ok((images, labels))
}

fn read_batch(path: &Path) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| {
        ShdlError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    parse_cifar_batch(&bytes).map_err(|e| match e {
        ShdlError::Format { offset, message } => ShdlError::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn cifar_dataset(dir: &Path, files: &[&str], split: Split) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (im, lb) = read_batch(&dir.join(f))?;
        images.extend(im);
        labels.extend(lb);
    }
    Ok(Dataset {
        images,
        labels,
        class_names: CIFAR_CLASSES.iter().map(|s| s.to_string()).collect(),
        split,
        source: format!("cifar10:{}", dir.display()),
    })
}

/// Loads the canonical CIFAR-10 binary batches from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = cifar_dataset(dir, &CIFAR_TRAIN_FILES, Split::Train)?;
    let test = cifar_dataset(dir, &[CIFAR_TEST_FILE], Split::Test)?;
    Ok((train, test))
}

/// Loads only the CIFAR-10 test batch.
pub fn load_cifar10_test(dir: &Path) -> Result<Dataset> {
    cifar_dataset(dir, &[CIFAR_TEST_FILE], Split::Test)
}

/// Serializes images (3x32x32, values in `[0, 1]`) as a CIFAR-10 batch.
pub fn encode_cifar_batch(images: &[ImageTensor], labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD);
    for (im, &l) in images.iter().zip(labels) {
        if (im.channels(), im.height(), im.width()) != (3, 32, 32) || l > 9 {
            return Err(ShdlError::Validation("CIFAR records are 3x32x32 with labels 0..=9".into()));
        }
        out.push(l as u8);
        for v in im.data().iter() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Outcome of an image-folder load.
#[derive(Debug, Clone, PartialEq)]
pub struct FolderReport {
    pub per_class: Vec<(String, usize)>,
    pub skipped: usize,
}

/// Loads `dir/<class>/<image>` as RGB, resized bicubically to `target`.
/// Classes are the sorted sub-directory names minus `exclude`.
pub fn load_image_folder(dir: &Path, target: (usize, usize), exclude: &[&str]) -> Result<(Dataset, FolderReport)> {
    let mut classes: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| !exclude.contains(&n.as_str()))
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(ShdlError::Validation(format!("{}: no class directories", dir.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut per_class = Vec::new();
    let mut skipped = 0;
    for (label, name) in classes.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(dir.join(name))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut count = 0;
        for f in files {
            match image::open(&f) {
                Ok(img) => {
                    let rgb = img.to_rgb8();
                    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                    let data = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
                    });
                    images.push(ImageTensor::from_array(data).resize_bicubic(target.0, target.1));
                    labels.push(label);
                    count += 1;
                }
                Err(_) => skipped += 1,
            }
        }
        if count == 0 {
            return Err(ShdlError::Validation(format!("class {name} has no decodable images")));
        }
        per_class.push((name.clone(), count));
    }
    if skipped > 0 {
        log::warn!("{skipped} undecodable files skipped");
    }
    Ok((
        Dataset {
            images,
            labels,
            class_names: classes,
            split: Split::Train,
            source: format!("folder:{}", dir.display()),
        },
        FolderReport { per_class, skipped },
    ))
}

/// Exactly `n_per_class` samples of every class, drawn by a seeded
/// shuffle and returned in original order.
pub fn subsample_balanced(ds: &Dataset, n_per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n_per_class * ds.num_classes());
    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if members.len() < n_per_class {
            return Err(ShdlError::Validation(format!(
                "class {} ({class}) has {} samples, {n_per_class} requested",
                ds.class_names[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..n_per_class]);
    }
    picked.sort_unstable();
    Ok(ds.subset(&picked))
}

/// Class-structured synthetic colour images: each class has its own
/// oriented grating, frequency and tint, with random phase and noise.
pub fn synthetic_dataset(n_per_class: usize, classes: usize, size: (usize, usize), seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for i in 0..n_per_class * classes {
        let class = i % classes;
        let angle = std::f64::consts::PI * class as f64 / classes as f64;
        let freq = 0.35 + 0.25 * (class % 3) as f64;
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let tint = [
            0.5 + 0.4 * (class as f64 * 1.3).sin(),
            0.5 + 0.4 * (class as f64 * 2.1).cos(),
            0.5 + 0.4 * (class as f64 * 0.7).sin(),
        ];
        let (ca, sa) = (angle.cos(), angle.sin());
        let data = Array3::from_shape_fn((3, size.0, size.1), |(c, y, x)| {
            let t = freq * (x as f64 * ca + y as f64 * sa) + phase;
            let v = 0.5 + 0.3 * t.sin() * tint[c] + 0.08 * (rng.random::<f64>() - 0.5);
            v.clamp(0.0, 1.0)
        });
        images.push(ImageTensor::from_array(data));
        labels.push(class);
    }
    Dataset {
        images,
        labels,
        class_names: (0..classes).map(|c| format!("class{c}")).collect(),
        split: Split::Train,
        source: format!("synthetic:seed={seed}"),
    }
}

/// Writes a CIFAR-10-layout directory from two datasets of 3x32x32 images.
///
/// The training set is split across the five batch files.
pub fn write_cifar_dir(dir: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let per = train.len().div_ceil(5).max(1);
    for (b, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        let lo = (b * per).min(train.len());
        let hi = ((b + 1) * per).min(train.len());
        let bytes = encode_cifar_batch(&train.images[lo..hi], &train.labels[lo..hi])?;
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join(CIFAR_TEST_FILE), encode_cifar_batch(&test.images, &test.labels)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 7;
        rec[1] = 255;
        rec[1 + 1024 + 33] = 51;
        let (im, lb) = parse_cifar_batch(&rec).unwrap();
        assert_eq!(lb, vec![7]);
        assert_eq!(im[0].data()[[0, 0, 0]], 1.0);
        assert!((im[0].data()[[1, 1, 1]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bad_length_and_label_offsets() {
        let bytes = vec![0u8; 2 * CIFAR_RECORD + 10];
        match parse_cifar_batch(&bytes) {
            Err(ShdlError::Format { offset, .. }) => assert_eq!(offset, 2 * CIFAR_RECORD as u64),
            other => panic!("{other:?}"),
        }
        let mut bytes = vec![0u8; 3 * CIFAR_RECORD];
        bytes[2 * CIFAR_RECORD] = 10;
        match parse_cifar_batch(&bytes) {
            Err(ShdlError::Format { offset, .. }) => assert_eq!(offset, 2 * CIFAR_RECORD as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encode_parse_round_trip() {
        let ds = synthetic_dataset(2, 10, (32, 32), 1);
        let bytes = encode_cifar_batch(&ds.images, &ds.labels).unwrap();
        assert_eq!(bytes.len(), 20 * CIFAR_RECORD);
        let (im, lb) = parse_cifar_batch(&bytes).unwrap();
        assert_eq!(lb, ds.labels);
        assert_eq!(encode_cifar_batch(&im, &lb).unwrap(), bytes);
    }

    #[test]
    fn balanced_subsample() {
        let ds = synthetic_dataset(12, 4, (8, 8), 2);
        let a = subsample_balanced(&ds, 5, 1).unwrap();
        let b = subsample_balanced(&ds, 5, 2).unwrap();
        assert_eq!(a.class_counts(), vec![5; 4]);
        assert_eq!(b.class_counts(), vec![5; 4]);
        assert_ne!(a.images, b.images);
        assert_eq!(a, subsample_balanced(&ds, 5, 1).unwrap());
        assert_eq!(subsample_balanced(&ds, 12, 3).unwrap().len(), 48);
        match subsample_balanced(&ds, 13, 0) {
            Err(ShdlError::Validation(m)) => assert!(m.contains("class0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn image_folder_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (class, n) in [("b_cats", 2), ("a_dogs", 3), ("clutter", 1)] {
            let d = dir.path().join(class);
            fs::create_dir(&d).unwrap();
            for i in 0..n {
                let img = image::RgbImage::from_fn(10, 6, |x, y| image::Rgb([(x * 20) as u8, (y * 30) as u8, i as u8]));
                img.save(d.join(format!("{i}.png"))).unwrap();
            }
        }
        fs::write(dir.path().join("a_dogs").join("junk.png"), b"not an image").unwrap();
        let (ds, rep) = load_image_folder(dir.path(), (16, 16), &["clutter"]).unwrap();
        assert_eq!(ds.class_names, vec!["a_dogs", "b_cats"]);
        assert_eq!(ds.len(), 5);
        assert_eq!(rep.skipped, 1);
        assert_eq!(ds.images[0].height(), 16);
        let empty = tempfile::tempdir().unwrap();
        assert!(load_image_folder(empty.path(), (8, 8), &[]).is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = synthetic_dataset(1, 2, (4, 4), 1);
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.labels[0] = 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
