//! MNIST (IDX) and CIFAR-10 (binary batch) loading, splitting and
//! normalization.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::config::{DataConfig, DatasetKind, Normalization};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Images as one flat `count x c x h x w` buffer plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<f64>, labels: Vec<usize>, shape: (usize, usize, usize)) -> Result<Self> {
        let (channels, height, width) = shape;
        let per = channels * height * width;
        if images.len() != labels.len() * per {
            return Err(Error::Length {
                what: "dataset images".into(),
                expected: labels.len() * per,
                actual: images.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
            return Err(Error::Data(format!("label {bad} is not a class index 0..9")));
        }
        Ok(Dataset {
            name: name.into(),
            images,
            labels,
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Values per image.
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// The images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            name: self.name.clone(),
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    /// First `n` images (all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length {
            what: format!("IDX header of {}", path.display()),
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX image file and its label file. Pixels are scaled to [0, 1].
pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = read(images)?;
    let lb = read(labels)?;
    let magic = be_u32(&ib, 0, images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected IDX image magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}",
            images.display()
        )));
    }
    let magic = be_u32(&lb, 0, labels)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected IDX label magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}",
            labels.display()
        )));
    }
    let count = be_u32(&ib, 4, images)? as usize;
    let rows = be_u32(&ib, 8, images)? as usize;
    let cols = be_u32(&ib, 12, images)? as usize;
    let label_count = be_u32(&lb, 4, labels)? as usize;
    if count != label_count {
        return Err(Error::Consistency(format!(
            "{} holds {count} images but {} holds {label_count} labels",
            images.display(),
            labels.display()
        )));
    }
    let need = 16 + count * rows * cols;
    if ib.len() != need {
        return Err(Error::Length {
            what: images.display().to_string(),
            expected: need,
            actual: ib.len(),
        });
    }
    if lb.len() != 8 + count {
        return Err(Error::Length {
            what: labels.display().to_string(),
            expected: 8 + count,
            actual: lb.len(),
        });
    }
    let pixels = ib[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels_v = lb[8..].iter().map(|&b| b as usize).collect();
    Dataset::new("mnist", pixels, labels_v, (1, rows, cols))
}

/// Parses CIFAR-10 binary batches: per record one label byte, then the red,
/// green and blue 32x32 planes. Pixels are scaled to [0, 1].
pub fn load_cifar10(paths: &[PathBuf]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            if rec[0] >= 10 {
                return Err(Error::Data(format!("{}: label {} is not a class index 0..9", path.display(), rec[0])));
            }
            labels.push(rec[0] as usize);
            images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Dataset::new("cifar10", images, labels, (3, 32, 32))
}

fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    ds.images
        .iter()
        .map(|&v| {
            let b = (v * 255.0).round();
            if (0.0..=255.0).contains(&b) && (b / 255.0 - v).abs() < 1e-9 {
                Ok(b as u8)
            } else {
                Err(Error::Data(format!("pixel {v} is not a byte value / 255")))
            }
        })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `ds` (single channel, byte-valued pixels) as an IDX image and label
/// file pair.
pub fn write_mnist(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    if ds.channels != 1 {
        return Err(Error::Config("IDX images need one channel".into()));
    }
    let mut ib = Vec::with_capacity(16 + ds.images.len());
    for v in [IDX_IMAGES_MAGIC, ds.len() as u32, ds.height as u32, ds.width as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend(to_bytes(ds)?);
    let mut lb = Vec::with_capacity(8 + ds.len());
    lb.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lb.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lb.extend(ds.labels.iter().map(|&l| l as u8));
    write(images, &ib)?;
    write(labels, &lb)
}

/// Writes `ds` (3 x 32 x 32, byte-valued pixels) as one CIFAR-10 batch.
pub fn write_cifar10(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.shape() != [3, 32, 32] {
        return Err(Error::Config("CIFAR-10 records are 3 x 32 x 32".into()));
    }
    let pixels = to_bytes(ds)?;
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (i, &label) in ds.labels.iter().enumerate() {
        out.push(label as u8);
        out.extend_from_slice(&pixels[i * 3072..(i + 1) * 3072]);
    }
    write(path, &out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub validation: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            validation: 10_000,
            seed: 0,
        }
    }
}

/// Deterministic shuffle by seed; the first `spec.validation` shuffled images
/// form the validation set, the rest (in original order) the training set.
pub fn split_validation(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if spec.validation == 0 {
        return Ok((ds.clone(), ds.subset(&[])));
    }
    if spec.validation >= ds.len() {
        return Err(Error::Config(format!(
            "validation count {} must be below the dataset size {}",
            spec.validation,
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::stream(spec.seed, Stream::Data));
    let mut val = order[..spec.validation].to_vec();
    let mut train = order[spec.validation..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Per-channel mean and standard deviation (population divisor).
pub fn channel_stats(ds: &Dataset) -> Vec<(f64, f64)> {
    let plane = ds.height * ds.width;
    (0..ds.channels)
        .map(|c| {
            let vals = (0..ds.len()).flat_map(|i| ds.image(i)[c * plane..(c + 1) * plane].iter().copied());
            let n = (ds.len() * plane) as f64;
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Applies `(x - mean) / std` per channel. A zero std is replaced by 1 with
/// a warning.
pub fn apply_standardization(ds: &mut Dataset, stats: &[(f64, f64)]) {
    let plane = ds.height * ds.width;
    let per = ds.image_len();
    for (c, &(mean, std)) in stats.iter().enumerate() {
        let std = if std > 0.0 {
            std
        } else {
            eprintln!("warning: channel {c} has zero standard deviation; using 1");
            1.0
        };
        for img in ds.images.chunks_mut(per) {
            for v in &mut img[c * plane..(c + 1) * plane] {
                *v = (*v - mean) / std;
            }
        }
    }
}

/// Normalizes `train` and `others` with statistics computed on `train` only.
pub fn normalize(train: &mut Dataset, others: &mut [&mut Dataset], scheme: Normalization) {
    if scheme == Normalization::Unit {
        return;
    }
    let stats = channel_stats(train);
    apply_standardization(train, &stats);
    for ds in others.iter_mut() {
        apply_standardization(ds, &stats);
    }
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Training and test sets as described by `config`.
pub fn load_dataset(config: &DataConfig) -> Result<(Dataset, Dataset)> {
    let dir = config.resolved_dir();
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    match config.kind {
        DatasetKind::Mnist => {
            let f = |name: &str| dir.join(name);
            Ok((
                load_mnist(&f(MNIST_FILES[0]), &f(MNIST_FILES[1]))?,
                load_mnist(&f(MNIST_FILES[2]), &f(MNIST_FILES[3]))?,
            ))
        }
        DatasetKind::Cifar10 => {
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            Ok((load_cifar10(&train)?, load_cifar10(&[dir.join("test_batch.bin")])?))
        }
    }
}
