//! Training runs over the K-trial protocol, evaluation, sweeps and embedding export.

mod config;
mod eval;
mod run;
mod source;
mod sweep;

pub use config::{sha256_hex, TrainConfig, SYNTHETIC_DATASET};
pub use eval::{
    evaluate_trial, export_embeddings, predict_samples, report_from_predictions, scored_predictions,
    CHECKPOINT_SELECTION,
};
pub use run::{train_trial, trial_seed, EpochLog, RunRecord, TrainedTrial};
pub use source::{resolve_splits, selected_splits, DataSource};
pub use sweep::{evaluate_configs, sweep, sweep_csv, SweepAxis, SweepRow};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("loss became {value} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

/// Trains every selected trial of `cfg` in order.
pub fn run_trials(cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<Vec<TrainedTrial>, TrainError> {
    cfg.validate()?;
    let source = DataSource::load(cfg)?;
    selected_splits(cfg, source.num_classes())?
        .iter()
        .map(|split| train_trial(cfg, &source.trial_data(split)?, on_epoch))
        .collect()
}
