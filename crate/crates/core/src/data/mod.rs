//! Dataset ingestion, the K-trial known/unknown protocol, augmentation and batching.

mod augment;
mod batches;
mod dataset;
mod npy;
mod npz;
mod splits;
pub mod synthetic;

pub use augment::{augment, crop_offsets, flip_horizontal, pad_crop, AugmentConfig, ChannelStats, STD_FLOOR};
pub use batches::{batch_indices, epoch_permutation};
pub use dataset::{load_dataset, ImageDataset, SplitTag};
pub use npy::{encode_npy, load_npy, parse_npy, save_npy, NpyArray, NpyData};
pub use npz::{load_npz_member, NpzArchive};
pub use splits::{make_splits, OpenSetSplit, SplitFile, TrialEntry};

use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::InputShape;
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not an NPY file (bad magic)")]
    BadMagic,
    #[error("unsupported NPY format version {major}.{minor}")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(String),
    #[error("Fortran-ordered arrays are not supported")]
    UnsupportedOrder,
    #[error("truncated file: need {expected} bytes, have {got}")]
    Truncated { expected: usize, got: usize },
    #[error("malformed NPY header: {0}")]
    BadHeader(String),
    #[error("zip archive: {0}")]
    Zip(String),
    #[error("archive has no member {0}")]
    MissingMember(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid split request: {0}")]
    InvalidSplit(String),
    #[error("malformed json in {path}: {message}")]
    Json { path: String, message: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Samples of one trial in raw scale (pixels in `[0, 1]`, or plain features).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    /// `len × input.len()` values, row-major.
    pub values: Vec<f64>,
    /// Trial label in `0..C` for known samples; `C` marks an unknown sample.
    pub labels: Vec<usize>,
    /// Class id in the source dataset.
    pub source_class: Vec<usize>,
    /// Row index in the source dataset.
    pub ids: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize, width: usize) -> &[f64] {
        &self.values[i * width..(i + 1) * width]
    }
}

/// One normalized batch ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B × H × W × ch`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Everything a training/evaluation run needs for one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialData {
    pub input: InputShape,
    pub num_classes: usize,
    pub train: Samples,
    pub test_known: Samples,
    pub test_unknown: Samples,
    /// Computed on the known-class training samples only.
    pub stats: ChannelStats,
    pub split: OpenSetSplit,
}

impl TrialData {
    /// Normalized batch of `samples[idx]`; augmentation is applied only when `augment` is given.
    pub fn batch(&self, samples: &Samples, idx: &[usize], augment_with: Option<(&AugmentConfig, &mut Rng)>) -> Batch {
        let width = self.input.len();
        let mut values = Vec::with_capacity(idx.len() * width);
        match augment_with {
            Some((cfg, rng)) => {
                for &i in idx {
                    values.extend(augment(samples.row(i, width), self.input, rng, cfg, &self.stats));
                }
            }
            None => {
                for &i in idx {
                    values.extend(self.stats.normalize(samples.row(i, width), self.input));
                }
            }
        }
        let shape = vec![idx.len(), self.input.height, self.input.width, self.input.channels];
        Batch {
            images: Tensor::new(shape, values).expect("batch shape"),
            labels: idx.iter().map(|&i| samples.labels[i]).collect(),
        }
    }
}

/// Builds the trial view of a dataset under `split`: training samples of known
/// classes, known and unknown test samples, and training-set statistics.
pub fn prepare_trial(train: &ImageDataset, test: &ImageDataset, split: &OpenSetSplit) -> Result<TrialData, DataError> {
    if train.shape != test.shape {
        return Err(DataError::InvalidDataset(format!(
            "train shape {:?} differs from test shape {:?}",
            train.shape, test.shape
        )));
    }
    let c = split.known.len();
    let collect = |ds: &ImageDataset, want_known: bool| {
        let mut out = Samples::default();
        for i in 0..ds.len() {
            let class = ds.labels[i];
            let label = split.remap(class);
            if label.is_some() != want_known {
                continue;
            }
            out.values.extend(ds.image(i).iter().map(|p| f64::from(*p) / 255.0));
            out.labels.push(label.unwrap_or(c));
            out.source_class.push(class);
            out.ids.push(i);
        }
        out
    };
    let train_s = collect(train, true);
    if train_s.is_empty() {
        return Err(DataError::InvalidDataset("no training samples of known classes".into()));
    }
    let stats = ChannelStats::compute(&train_s.values, train.shape);
    Ok(TrialData {
        input: train.shape,
        num_classes: c,
        test_known: collect(test, true),
        test_unknown: collect(test, false),
        train: train_s,
        stats,
        split: split.clone(),
    })
}
