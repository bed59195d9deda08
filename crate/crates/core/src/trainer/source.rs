use std::path::Path;

use super::{TrainConfig, TrainError, SYNTHETIC_DATASET};
use crate::data::synthetic::GaussianMixture;
use crate::data::{load_dataset, make_splits, prepare_trial, ImageDataset, OpenSetSplit, SplitFile, TrialData};

/// Loaded samples from which each trial's view is built.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Gaussian mixture drawn from the given seed.
    Synthetic {
        mixture: GaussianMixture,
        seed: u64,
    },
    Images {
        train: ImageDataset,
        test: ImageDataset,
    },
}

impl DataSource {
    pub fn load(cfg: &TrainConfig) -> Result<Self, TrainError> {
        if cfg.dataset == SYNTHETIC_DATASET {
            return Ok(DataSource::Synthetic {
                mixture: GaussianMixture::default(),
                seed: cfg.seed,
            });
        }
        let (train, test) = load_dataset(Path::new(&cfg.dataset))?;
        Ok(DataSource::Images { train, test })
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DataSource::Synthetic { mixture, .. } => mixture.classes,
            DataSource::Images { train, test } => train.num_classes().max(test.num_classes()),
        }
    }

    pub fn trial_data(&self, split: &OpenSetSplit) -> Result<TrialData, TrainError> {
        match self {
            DataSource::Synthetic { mixture, seed } => Ok(mixture.trial_data(*seed, split)),
            DataSource::Images { train, test } => Ok(prepare_trial(train, test, split)?),
        }
    }
}

/// Every split of the run: read from the split file, or drawn from the seed.
pub fn resolve_splits(cfg: &TrainConfig, num_classes: usize) -> Result<Vec<OpenSetSplit>, TrainError> {
    let splits = match &cfg.split_file {
        Some(path) => SplitFile::load(path)?.splits()?,
        None => make_splits(num_classes, cfg.trials, cfg.seed, &cfg.pinned, cfg.known_classes)?,
    };
    if let Some(bad) = splits
        .iter()
        .flat_map(|s| s.known.iter().chain(&s.unknown))
        .find(|&&c| c >= num_classes)
    {
        return Err(TrainError::Config(format!(
            "split names class {bad} but the dataset has {num_classes}"
        )));
    }
    Ok(splits)
}

/// The splits picked by the trial selector.
pub fn selected_splits(cfg: &TrainConfig, num_classes: usize) -> Result<Vec<OpenSetSplit>, TrainError> {
    let splits = resolve_splits(cfg, num_classes)?;
    match cfg.trial {
        None => Ok(splits),
        Some(k) => splits
            .into_iter()
            .find(|s| s.trial == k)
            .map(|s| vec![s])
            .ok_or_else(|| TrainError::Config(format!("no trial {k} in the splits"))),
    }
}
