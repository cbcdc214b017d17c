//! Dataset ingestion and bag construction.
//!
//! Datasets come from IDX image/label file pairs (the MNIST family; plain or
//! gzip-compressed) or from a synthetic Gaussian generator used by the
//! oracle-scale tests. Bags are disjoint fixed-size groups drawn from a
//! seeded permutation of the instances; the trailing `n mod K` instances are
//! dropped.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::multiset::LabelMultiset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature matrix plus labels. Features are stored as `f32` in `[0, 1]`
/// (pixels are scaled by 1/255); all arithmetic downstream is `f64`.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<u8>,
    dim: usize,
    num_classes: usize,
    source: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<u8>,
        dim: usize,
        num_classes: usize,
        source: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() || dim == 0 {
            return Err(Error::Config("empty dataset".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} instances of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| usize::from(y) >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad.into(),
                num_classes,
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    /// New dataset holding the given instances, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
            source: self.source.clone(),
        }
    }
}

/// A fixed-size group of instances with its label multiset. The per-instance
/// labels stay private to the evaluation path; training losses only see the
/// multiset.
#[derive(Debug, Clone)]
pub struct Bag {
    indices: Vec<usize>,
    multiset: LabelMultiset,
    hidden_labels: Vec<usize>,
}

impl Bag {
    pub fn from_dataset(ds: &Dataset, indices: Vec<usize>) -> Result<Self> {
        let labels: Vec<usize> = indices.iter().map(|&i| ds.label(i)).collect();
        let multiset = LabelMultiset::from_labels(&labels, ds.num_classes())?;
        debug_assert_eq!(
            multiset.counts().iter().map(|&n| n as usize).sum::<usize>(),
            labels.len()
        );
        Ok(Self {
            indices,
            multiset,
            hidden_labels: labels,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn multiset(&self) -> &LabelMultiset {
        &self.multiset
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// True labels, for evaluation and the supervised baseline only.
    pub fn labels_for_eval(&self) -> &[usize] {
        &self.hidden_labels
    }
}

struct IdxFile {
    bytes: Vec<u8>,
    pos: usize,
    path: PathBuf,
}

impl IdxFile {
    fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut bytes = Vec::new();
        if path.extension().is_some_and(|e| e == "gz") {
            GzDecoder::new(file).read_to_end(&mut bytes)?;
        } else {
            file.read_to_end(&mut bytes)?;
        }
        Ok(Self {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        })
    }

    fn read_u32(&mut self) -> Result<u32> {
        let slice = self.take(4)?;
        Ok(u32::from_be_bytes([slice[0], slice[1], slice[2], slice[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile {
                path: self.path.clone(),
                offset: self.pos as u64,
                needed: (self.pos + n - self.bytes.len()) as u64,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn expect_magic(&mut self, expected: u32) -> Result<()> {
        let offset = self.pos as u64;
        let found = self.read_u32()?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                offset,
                found,
                expected,
            });
        }
        Ok(())
    }
}

/// Parses an IDX image/label file pair into a dataset. Headers are
/// big-endian; pixel bytes are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = IdxFile::open(images_path)?;
    images.expect_magic(IMAGES_MAGIC)?;
    let n_images = images.read_u32()? as usize;
    let rows = images.read_u32()? as usize;
    let cols = images.read_u32()? as usize;
    let dim = rows * cols;
    let pixels = images.take(n_images * dim)?;
    let features: Vec<f32> = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();

    let mut labels_file = IdxFile::open(labels_path)?;
    labels_file.expect_magic(LABELS_MAGIC)?;
    let n_labels = labels_file.read_u32()? as usize;
    if n_labels != n_images {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let labels = labels_file.take(n_labels)?.to_vec();

    let num_classes = labels
        .iter()
        .map(|&y| usize::from(y) + 1)
        .max()
        .unwrap_or(0)
        .max(2);
    let source = images_path
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(features, labels, dim, num_classes, source)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads one split of `<root>/<name>/{train,t10k}-{images,labels}-idx?-ubyte`,
/// accepting `.gz` variants.
pub fn load_split(root: &Path, name: &str, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let dir = root.join(name);
    let images = find_idx_file(&dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find_idx_file(&dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let mut ds = load_idx(&images, &labels)?;
    ds.source = name.to_string();
    Ok(ds)
}

fn find_idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Config(format!(
        "dataset file not found: {} (also tried .gz)",
        plain.display()
    )))
}

/// Disjoint seeded split into `(train, validation)` with
/// `floor(n * (1 - fraction))` training instances.
pub fn train_val_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_n = (ds.len() as f64 * (1.0 - fraction)).floor() as usize;
    Ok((
        ds.subset(&indices[..train_n]),
        ds.subset(&indices[train_n..]),
    ))
}

/// Partitions a seeded permutation into `floor(n / K)` disjoint bags,
/// dropping the remainder.
pub fn make_bags(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Bag>> {
    if k == 0 {
        return Err(Error::Config("bag size K must be positive".into()));
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    indices
        .chunks_exact(k)
        .map(|chunk| Bag::from_dataset(ds, chunk.to_vec()))
        .collect()
}

/// Isotropic Gaussian blobs with unit-norm class centers scaled by
/// `separation`. Centers sit on the unit circle of the first two feature
/// dimensions (evenly spaced in `[-1, 1]` when `d == 1`), so they are
/// distinct for any number of classes.
pub fn synthetic_gaussian(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::Config(
            "synthetic data needs C >= 2, d >= 1, per-class n >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let mut center = vec![0.0f64; dim];
        if dim == 1 {
            center[0] = -1.0 + 2.0 * c as f64 / (num_classes - 1) as f64;
        } else {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
            center[0] = angle.cos();
            center[1] = angle.sin();
        }
        for _ in 0..per_class {
            for center_coord in center.iter() {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((separation * center_coord + noise) as f32);
            }
            labels.push(c as u8);
        }
    }
    Dataset::new(features, labels, dim, num_classes, "synthetic")
}
