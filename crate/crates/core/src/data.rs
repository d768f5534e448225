//! Datasets: IDX (MNIST) decoding, image sequentialization, train/validation
//! splitting, and a synthetic task where only a few input dimensions carry signal.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IdxError, Result};
use crate::numerics::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const MNIST_CLASSES: usize = 10;

/// One sequence (T rows of D features) with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seq: Matrix,
    pub label: usize,
}

/// Sequences of uniform length and width with labels below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    samples: Vec<Sample>,
    steps: usize,
    dim: usize,
    classes: usize,
}

impl SequenceBatch {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Self> {
        let (steps, dim) = samples.first().map_or((0, 0), |s| s.seq.shape());
        for s in &samples {
            if s.seq.shape() != (steps, dim) {
                return Err(Error::shape(
                    "SequenceBatch::new",
                    format!("{steps}x{dim}"),
                    format!("{}x{}", s.seq.rows(), s.seq.cols()),
                ));
            }
            if s.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes,
                });
            }
        }
        Ok(SequenceBatch {
            samples,
            steps,
            dim,
            classes,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// New batch holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        SequenceBatch {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            steps: self.steps,
            dim: self.dim,
            classes: self.classes,
        }
    }

    pub fn take(&self, n: usize) -> SequenceBatch {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: SequenceBatch,
    pub val: SequenceBatch,
    pub test: SequenceBatch,
}

/// Raw greyscale images scaled to [0, 1] with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels: indices.iter().map(|&i| self.pixels[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            needed: offset + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Decodes an IDX3 image file: magic 0x00000803, count, rows, cols, then u8 pixels.
/// Returns (rows, cols, images as bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<&[u8]>), IdxError> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let size = rows.checked_mul(cols).ok_or(IdxError::Truncated {
        needed: usize::MAX,
        available: bytes.len(),
    })?;
    let needed = size
        .checked_mul(count)
        .and_then(|n| n.checked_add(16))
        .ok_or(IdxError::Truncated {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let payload = &bytes[16..needed];
    let images = if size == 0 {
        vec![&payload[..0]; count]
    } else {
        payload.chunks_exact(size).collect()
    };
    Ok((rows, cols, images))
}

/// Decodes an IDX1 label file: magic 0x00000801, count, then u8 labels.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = count.checked_add(8).ok_or(IdxError::Truncated {
        needed: usize::MAX,
        available: bytes.len(),
    })?;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(&bytes[8..needed])
}

/// Pairs decoded images and labels, scaling pixels by 1/255.
pub fn decode_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<ImageSet, IdxError> {
    let (rows, cols, images) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(ImageSet {
        rows,
        cols,
        pixels: images
            .iter()
            .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect(),
        labels: labels.iter().map(|&l| l as usize).collect(),
    })
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageSet> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    Ok(decode_idx(&images, &labels)?)
}

/// Standard MNIST file names inside `dir`; `train` selects the 60k split.
pub fn load_mnist(dir: impl AsRef<Path>, train: bool) -> Result<ImageSet> {
    let dir = dir.as_ref();
    let prefix = if train { "train" } else { "t10k" };
    load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    /// One pixel per step in row-major order: T = 784, D = 1.
    Pixelwise,
    /// One image row per step: T = 28, D = 28.
    Rowwise,
}

impl ScanMode {
    pub fn shape(self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            ScanMode::Pixelwise => (rows * cols, 1),
            ScanMode::Rowwise => (rows, cols),
        }
    }
}

pub fn sequentialize(images: &ImageSet, mode: ScanMode) -> Result<SequenceBatch> {
    if images.rows != MNIST_SIDE || images.cols != MNIST_SIDE {
        return Err(IdxError::ImageSize {
            rows: images.rows,
            cols: images.cols,
        }
        .into());
    }
    let (t, d) = mode.shape(images.rows, images.cols);
    let samples = images
        .pixels
        .iter()
        .zip(&images.labels)
        .map(|(px, &label)| {
            // Row-major pixels reshape directly for both modes.
            Ok(Sample {
                seq: Matrix::new(t, d, px.clone())?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceBatch::new(samples, MNIST_CLASSES)
}

/// Inverse of [`sequentialize`] for one sequence.
pub fn unflatten(seq: &Matrix) -> Vec<f64> {
    seq.as_slice().to_vec()
}

/// Random disjoint train/validation split of `pool`, deterministic in `seed`.
pub fn split_train_val(
    pool: &SequenceBatch,
    val_size: usize,
    seed: u64,
) -> Result<(SequenceBatch, SequenceBatch)> {
    if val_size >= pool.len() {
        return Err(Error::Invalid(format!(
            "validation size {val_size} must be smaller than pool size {}",
            pool.len()
        )));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = idx.split_at(val_size);
    Ok((pool.select(train), pool.select(val)))
}

/// Sizes and scan mode for turning the MNIST train/test sets into a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MnistProtocol {
    pub scan: ScanMode,
    /// Validation samples drawn from the training pool.
    pub val_size: usize,
    /// Training subset size; `None` keeps the rest of the pool.
    pub train_size: Option<usize>,
    /// Test subset size; `None` keeps the whole test set.
    pub test_size: Option<usize>,
}

impl MnistProtocol {
    /// Shuffles the pool once: the first `val_size` indices form the validation
    /// set and the next `train_size` the training set. Returns (train, val).
    pub fn train_val(
        &self,
        pool: &ImageSet,
        rng: &mut impl Rng,
    ) -> Result<(SequenceBatch, SequenceBatch)> {
        if self.val_size >= pool.len() {
            return Err(Error::Invalid(format!(
                "validation size {} must be smaller than pool size {}",
                self.val_size,
                pool.len()
            )));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        let (val, rest) = idx.split_at(self.val_size);
        let train = match self.train_size {
            Some(n) if n > rest.len() => {
                return Err(Error::Invalid(format!(
                    "train size {n} exceeds the {} remaining samples",
                    rest.len()
                )))
            }
            Some(n) => &rest[..n],
            None => rest,
        };
        Ok((
            sequentialize(&pool.select(train), self.scan)?,
            sequentialize(&pool.select(val), self.scan)?,
        ))
    }

    /// The test set, or a random subset of `test_size` of it.
    pub fn test_subset(&self, test: &ImageSet, rng: &mut impl Rng) -> Result<SequenceBatch> {
        let mut idx: Vec<usize> = (0..test.len()).collect();
        if let Some(n) = self.test_size {
            if n > test.len() {
                return Err(Error::Invalid(format!(
                    "test size {n} exceeds {} test samples",
                    test.len()
                )));
            }
            idx.shuffle(rng);
            idx.truncate(n);
        }
        sequentialize(&test.select(&idx), self.scan)
    }

    pub fn split(
        &self,
        pool: &ImageSet,
        test: &ImageSet,
        rng: &mut impl Rng,
    ) -> Result<DatasetSplit> {
        let (train, val) = self.train_val(pool, rng)?;
        Ok(DatasetSplit {
            train,
            val,
            test: self.test_subset(test, rng)?,
        })
    }
}

/// Uniformly random subset of `n` samples (all of them if `n >= len`).
pub fn random_subset(pool: &SequenceBatch, n: usize, rng: &mut impl Rng) -> SequenceBatch {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    pool.select(&idx)
}

/// Parameters of the planted-dimension task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedTask {
    pub steps: usize,
    pub dim: usize,
    pub informative: usize,
    pub noise_sigma: f64,
    pub mean_shift: f64,
}

impl Default for PlantedTask {
    fn default() -> Self {
        PlantedTask {
            steps: 20,
            dim: 16,
            informative: 4,
            noise_sigma: 1.0,
            mean_shift: 0.5,
        }
    }
}

/// Planted-task split of `n_samples` sequences; see [`PlantedTask::generate`].
pub fn gen_planted_task(task: &PlantedTask, n_samples: usize, seed: u64) -> Result<PlantedData> {
    task.generate(n_samples, seed)
}

/// A generated planted-task split plus the dimensions that carry the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub split: DatasetSplit,
    pub informative_dims: Vec<usize>,
}

impl PlantedTask {
    /// Generates `n_samples` sequences split 60/20/20 into train/val/test.
    ///
    /// Class `y ∈ {0, 1}` shifts each informative dimension by `±mean_shift` at
    /// every step; all entries carry `N(0, noise_sigma²)` noise. Labels alternate
    /// so every split is balanced up to one sample.
    pub fn generate(&self, n_samples: usize, seed: u64) -> Result<PlantedData> {
        if self.informative == 0 || self.informative >= self.dim {
            return Err(Error::Invalid(format!(
                "need 0 < informative ({}) < dim ({})",
                self.informative, self.dim
            )));
        }
        if self.steps == 0 || !(self.noise_sigma >= 0.0) || !self.mean_shift.is_finite() {
            return Err(Error::Invalid(
                "planted task needs steps > 0 and finite noise/shift".into(),
            ));
        }
        if n_samples < 5 {
            return Err(Error::Invalid(
                "planted task needs at least 5 samples".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims: Vec<usize> = (0..self.dim).collect();
        dims.shuffle(&mut rng);
        let mut informative_dims = dims[..self.informative].to_vec();
        informative_dims.sort_unstable();
        let noise =
            Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Invalid(e.to_string()))?;

        let make = |count: usize, rng: &mut ChaCha8Rng| -> Result<SequenceBatch> {
            let samples = (0..count)
                .map(|i| {
                    let label = i % 2;
                    let sign = if label == 1 { 1.0 } else { -1.0 };
                    let mut seq = Matrix::zeros(self.steps, self.dim);
                    for t in 0..self.steps {
                        let row = seq.row_mut(t);
                        for v in row.iter_mut() {
                            *v = noise.sample(rng);
                        }
                        for &k in &informative_dims {
                            row[k] += sign * self.mean_shift;
                        }
                    }
                    Sample { seq, label }
                })
                .collect();
            SequenceBatch::new(samples, 2)
        };
        let n_val = n_samples / 5;
        let n_test = n_samples / 5;
        let n_train = n_samples - n_val - n_test;
        let train = make(n_train, &mut rng)?;
        let val = make(n_val, &mut rng)?;
        let test = make(n_test, &mut rng)?;
        Ok(PlantedData {
            split: DatasetSplit { train, val, test },
            informative_dims,
        })
    }

    /// Accuracy of the Bayes-optimal rule for this task: `Φ(μ·√(kT)/σ)`.
    pub fn bayes_accuracy(&self) -> f64 {
        if self.noise_sigma == 0.0 {
            return 1.0;
        }
        let snr =
            self.mean_shift * ((self.informative * self.steps) as f64).sqrt() / self.noise_sigma;
        use statrs::distribution::ContinuousCDF;
        statrs::distribution::Normal::new(0.0, 1.0)
            .expect("unit normal")
            .cdf(snr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend(count.to_be_bytes());
        b.extend(rows.to_be_bytes());
        b.extend(cols.to_be_bytes());
        b.extend((0..(count * rows * cols) as usize).map(fill));
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_LABELS_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn mnist_protocol_sizes_and_disjointness() {
        let n = 40;
        let pool = decode_idx(
            &idx_images(n, 28, 28, |i| (i / 784) as u8),
            &idx_labels(&vec![1; n as usize]),
        )
        .unwrap();
        let test = pool.select(&[0, 1, 2, 3, 4, 5]);
        let proto = MnistProtocol {
            scan: ScanMode::Rowwise,
            val_size: 5,
            train_size: Some(20),
            test_size: Some(4),
        };
        let split = proto
            .split(&pool, &test, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(
            (split.train.len(), split.val.len(), split.test.len()),
            (20, 5, 4)
        );
        assert_eq!((split.train.steps(), split.train.dim()), (28, 28));
        // Every image is constant with a distinct value, so its first pixel identifies it.
        let id = |b: &SequenceBatch| {
            b.samples()
                .iter()
                .map(|s| s.seq.get(0, 0))
                .collect::<Vec<_>>()
        };
        let (tr, va) = (id(&split.train), id(&split.val));
        assert!(tr.iter().all(|v| !va.contains(v)));
        let again = proto
            .split(&pool, &test, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(again, split);
        let too_big = MnistProtocol {
            train_size: Some(36),
            ..proto
        };
        assert!(too_big
            .split(&pool, &test, &mut ChaCha8Rng::seed_from_u64(1))
            .is_err());
        let all = MnistProtocol {
            train_size: None,
            test_size: None,
            ..proto
        };
        let split = all
            .split(&pool, &test, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!((split.train.len(), split.test.len()), (35, 6));
    }

    #[test]
    fn decodes_small_idx_pair() {
        let imgs = idx_images(2, 28, 28, |i| (i % 256) as u8);
        let set = decode_idx(&imgs, &idx_labels(&[3, 7])).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!((set.rows, set.cols), (28, 28));
        assert_eq!(set.labels, vec![3, 7]);
        assert_eq!(set.pixels[0][255], 1.0);
        assert_eq!(set.pixels[0][1], 1.0 / 255.0);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let mut imgs = idx_images(1, 28, 28, |_| 0);
        let labels = idx_labels(&[1]);
        imgs[3] = 0x01;
        assert_eq!(
            decode_idx(&imgs, &labels).unwrap_err(),
            IdxError::BadMagic {
                expected: IDX_IMAGES_MAGIC,
                found: 0x0000_0801
            }
        );
        let imgs = idx_images(1, 28, 28, |_| 0);
        assert!(matches!(
            decode_idx(&imgs, &imgs).unwrap_err(),
            IdxError::BadMagic {
                expected: IDX_LABELS_MAGIC,
                ..
            }
        ));
        assert!(matches!(
            decode_idx(&imgs[..100], &labels).unwrap_err(),
            IdxError::Truncated {
                needed: 800,
                available: 100
            }
        ));
        assert!(matches!(
            decode_idx(&imgs, &labels[..6]).unwrap_err(),
            IdxError::Truncated { .. }
        ));
        assert_eq!(
            decode_idx(&imgs, &idx_labels(&[1, 2])).unwrap_err(),
            IdxError::CountMismatch {
                images: 1,
                labels: 2
            }
        );
    }

    #[test]
    fn huge_declared_count_is_truncation_not_panic() {
        let mut imgs = idx_images(0, 28, 28, |_| 0);
        imgs[4..8].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(
            parse_idx_images(&imgs),
            Err(IdxError::Truncated { .. })
        ));
    }

    fn tiny_set(pixels: Vec<Vec<f64>>) -> ImageSet {
        let n = pixels.len();
        ImageSet {
            rows: 28,
            cols: 28,
            pixels,
            labels: (0..n).map(|i| i % 10).collect(),
        }
    }

    #[test]
    fn sequentialize_shapes_and_zero_image() {
        let set = tiny_set(vec![vec![0.0; 784]]);
        let px = sequentialize(&set, ScanMode::Pixelwise).unwrap();
        assert_eq!((px.steps(), px.dim()), (784, 1));
        let rw = sequentialize(&set, ScanMode::Rowwise).unwrap();
        assert_eq!((rw.steps(), rw.dim()), (28, 28));
        assert!(px.samples()[0].seq.as_slice().iter().all(|v| *v == 0.0));
        assert!(rw.samples()[0].seq.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sequentialize_round_trips_and_scans_row_major() {
        let img: Vec<f64> = (0..784).map(|i| (i % 251) as f64 / 255.0).collect();
        let set = tiny_set(vec![img.clone()]);
        for mode in [ScanMode::Pixelwise, ScanMode::Rowwise] {
            let b = sequentialize(&set, mode).unwrap();
            assert_eq!(unflatten(&b.samples()[0].seq), img);
        }
        let rw = sequentialize(&set, ScanMode::Rowwise).unwrap();
        assert_eq!(rw.samples()[0].seq.get(1, 0), img[28]);
        let px = sequentialize(&set, ScanMode::Pixelwise).unwrap();
        assert_eq!(px.samples()[0].seq.get(29, 0), img[29]);
    }

    #[test]
    fn sequentialize_rejects_non_mnist_geometry() {
        let set = ImageSet {
            rows: 2,
            cols: 2,
            pixels: vec![vec![0.0; 4]],
            labels: vec![0],
        };
        assert!(sequentialize(&set, ScanMode::Rowwise).is_err());
    }

    fn pool(n: usize) -> SequenceBatch {
        let samples = (0..n)
            .map(|i| Sample {
                seq: Matrix::new(1, 1, vec![i as f64]).unwrap(),
                label: i % 3,
            })
            .collect();
        SequenceBatch::new(samples, 3).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let p = pool(100);
        let (tr, va) = split_train_val(&p, 20, 9).unwrap();
        assert_eq!((tr.len(), va.len()), (80, 20));
        let key = |b: &SequenceBatch| -> Vec<u64> {
            b.samples().iter().map(|s| s.seq.get(0, 0) as u64).collect()
        };
        let (mut a, b) = (key(&tr), key(&va));
        assert!(b.iter().all(|v| !a.contains(v)));
        a.extend(&b);
        a.sort_unstable();
        assert_eq!(a, (0..100).collect::<Vec<u64>>());
        let (tr2, va2) = split_train_val(&p, 20, 9).unwrap();
        assert_eq!((tr, va), (tr2, va2));
        let (_, va3) = split_train_val(&p, 20, 10).unwrap();
        assert_ne!(key(&va3), b);
    }

    #[test]
    fn split_edge_cases() {
        let p = pool(10);
        let (tr, va) = split_train_val(&p, 0, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (10, 0));
        assert!(split_train_val(&p, 10, 1).is_err());
    }

    #[test]
    fn batch_rejects_ragged_and_bad_labels() {
        let a = Sample {
            seq: Matrix::zeros(2, 3),
            label: 0,
        };
        let b = Sample {
            seq: Matrix::zeros(3, 3),
            label: 0,
        };
        assert!(SequenceBatch::new(vec![a.clone(), b], 2).is_err());
        let c = Sample {
            seq: Matrix::zeros(2, 3),
            label: 2,
        };
        assert!(matches!(
            SequenceBatch::new(vec![a, c], 2),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn planted_task_layout() {
        let task = PlantedTask::default();
        let data = task.generate(100, 3).unwrap();
        assert_eq!(data.informative_dims.len(), 4);
        let s = &data.split;
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        assert_eq!((s.train.steps(), s.train.dim()), (20, 16));
        let ones = s.train.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 30);
        assert_eq!(data, task.generate(100, 3).unwrap());
        assert!(PlantedTask {
            informative: 16,
            ..task.clone()
        }
        .generate(100, 1)
        .is_err());
    }

    #[test]
    fn noiseless_planted_task_is_separable() {
        let task = PlantedTask {
            noise_sigma: 0.0,
            ..PlantedTask::default()
        };
        let data = task.generate(50, 4).unwrap();
        for s in data.split.train.samples() {
            for t in 0..task.steps {
                for k in 0..task.dim {
                    let v = s.seq.get(t, k);
                    if data.informative_dims.contains(&k) {
                        assert_eq!(v, if s.label == 1 { 0.5 } else { -0.5 });
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn bayes_rule_matches_gaussian_discriminant() {
        // Sum of the informative entries is N(±μkT, σ²kT); the sign rule is optimal.
        let task = PlantedTask {
            noise_sigma: 4.0,
            ..PlantedTask::default()
        };
        let data = task.generate(20_000, 11).unwrap();
        let test = &data.split.test;
        let correct = test
            .samples()
            .iter()
            .filter(|s| {
                let mut sum = 0.0;
                for t in 0..task.steps {
                    for &k in &data.informative_dims {
                        sum += s.seq.get(t, k);
                    }
                }
                (sum > 0.0) == (s.label == 1)
            })
            .count();
        let empirical = correct as f64 / test.len() as f64;
        let analytic = task.bayes_accuracy();
        assert!((analytic - 0.8682).abs() < 1e-3, "{analytic}");
        assert!(
            (empirical - analytic).abs() < 0.02,
            "{empirical} vs {analytic}"
        );
    }
}
