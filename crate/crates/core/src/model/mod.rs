//! Backbone, cosine head, open-space descriptors and the loss terms built on them.

mod backbone;
mod check;
mod checkpoint;
mod descriptors;
mod head;
mod loss;

pub use backbone::{Architecture, Backbone, InputShape};
pub use check::{check_loss_gradients, random_loss_cases, LossCheckCase, TermCheck, LOSS_CHECK_STEP};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use descriptors::{sample_descriptors, DescriptorBatch, DescriptorMode, MIN_DRAW_NORM};
pub use head::{
    cos_prob, cosine_graph, cosine_logits, known_probs, margin_prob, mlas_prob, oss_prob, predict_row, CosineHead,
    HeadHyper, Prediction, ScoringMode, NORM_FLOOR, SCALE_FLOOR,
};
pub use loss::{head_logits, omcl_loss, term_log_likelihood, LossConfig, LossTerm, LossTerms};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match configured sample shape {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("embedding row {row} has zero norm")]
    DegenerateInput { row: usize },
    #[error("loss is not finite ({value})")]
    NonFiniteLoss { value: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub input: InputShape,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub init_scale: f64,
    pub hyper: HeadHyper,
}

/// Backbone followed by the cosine head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub head: CosineHead,
}

impl Model {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        let backbone = Backbone::new(cfg.arch.clone(), cfg.input, cfg.embed_dim, rng)?;
        let head = CosineHead::new(cfg.num_classes, cfg.embed_dim, cfg.init_scale, cfg.hyper, rng)?;
        Ok(Self { backbone, head })
    }

    /// Trainable scalars: backbone weights, class directions and the scale.
    /// The unknown channel has no weights.
    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.num_params()
    }

    pub fn embed(&self, images: &Tensor) -> Result<Tensor, ModelError> {
        self.backbone.embed(images)
    }

    pub fn predict(&self, images: &Tensor, mode: ScoringMode) -> Result<Vec<Prediction>, ModelError> {
        let z = self.embed(images)?;
        self.head.predict_embeddings(&z, mode)
    }
}
