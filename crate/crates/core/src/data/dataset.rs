use std::path::Path;

use serde::{Deserialize, Serialize};

use super::npy::{load_npy, NpyArray, NpyData};
use super::npz::NpzArchive;
use super::DataError;
use crate::model::InputShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    fn prefix(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// `N × H × W × ch` 8-bit images with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Vec<u8>,
    pub shape: InputShape,
    pub labels: Vec<usize>,
    pub split: SplitTag,
    pub class_names: Vec<String>,
}

impl ImageDataset {
    pub fn from_arrays(images: NpyArray, labels: NpyArray, split: SplitTag) -> Result<Self, DataError> {
        let NpyData::U8(pixels) = images.data else {
            return Err(DataError::InvalidDataset("images must be uint8".into()));
        };
        let shape = match images.shape.as_slice() {
            [_, h, w] => InputShape::new(*h, *w, 1),
            [_, h, w, c] => InputShape::new(*h, *w, *c),
            other => return Err(DataError::InvalidDataset(format!("image array shape {other:?}"))),
        };
        let n = images.shape[0];
        let label_ok = matches!(labels.shape.as_slice(), [m] | [m, 1] if *m == n);
        if !label_ok {
            return Err(DataError::InvalidDataset(format!(
                "{n} images but label array shape {:?}",
                labels.shape
            )));
        }
        let labels = labels
            .to_i64()
            .into_iter()
            .map(|v| usize::try_from(v).map_err(|_| DataError::InvalidDataset(format!("negative label {v}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            images: pixels,
            shape,
            labels,
            split,
            class_names: (0..classes).map(|c| format!("class_{c}")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }
}

/// Loads the train and test splits from a directory holding
/// `{train,test}_{images,labels}.npy` or from a single `.npz` archive with
/// those members.
pub fn load_dataset(path: &Path) -> Result<(ImageDataset, ImageDataset), DataError> {
    let load = |tag: SplitTag| -> Result<ImageDataset, DataError> {
        let (images, labels) = if path.is_dir() {
            (
                load_npy(&path.join(format!("{}_images.npy", tag.prefix())))?,
                load_npy(&path.join(format!("{}_labels.npy", tag.prefix())))?,
            )
        } else {
            let mut npz = NpzArchive::open(path)?;
            (
                npz.member(&format!("{}_images", tag.prefix()))?,
                npz.member(&format!("{}_labels", tag.prefix()))?,
            )
        };
        ImageDataset::from_arrays(images, labels, tag)
    };
    let mut train = load(SplitTag::Train)?;
    let mut test = load(SplitTag::Test)?;
    let classes = train.num_classes().max(test.num_classes());
    let names: Vec<String> = (0..classes).map(|c| format!("class_{c}")).collect();
    train.class_names = names.clone();
    test.class_names = names;
    Ok((train, test))
}
