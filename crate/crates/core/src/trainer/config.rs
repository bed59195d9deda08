use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::model::{
    Architecture, DescriptorMode, HeadHyper, InputShape, LossConfig, ModelConfig, ScoringMode, SCALE_FLOOR,
};

/// Dataset name that selects the built-in Gaussian-mixture task.
pub const SYNTHETIC_DATASET: &str = "synthetic";

/// Everything that determines a training run. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// NPY directory, `.npz` archive, or `synthetic`.
    pub dataset: String,
    /// Shared split file; splits are drawn from `seed` when absent.
    pub split_file: Option<PathBuf>,
    /// Number of trials `K` when drawing splits.
    pub trials: usize,
    /// One trial, or every trial when `None`.
    pub trial: Option<usize>,
    /// Known classes per trial; half the classes (rounded up) when absent.
    pub known_classes: Option<usize>,
    /// Classes kept known in every trial.
    pub pinned: Vec<usize>,
    pub backbone: Architecture,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Initial scale `s₀`.
    pub init_scale: f64,
    /// Keep `s` at `init_scale`.
    pub freeze_scale: bool,
    /// Learning rate of `s` relative to `lr`.
    pub scale_lr_factor: f64,
    pub margin: f64,
    pub threshold: f64,
    pub lambda: f64,
    /// Descriptors per batch; the batch size when absent.
    pub descriptors: Option<usize>,
    pub descriptor_mode: DescriptorMode,
    pub scoring: ScoringMode,
    pub enable_mlas: bool,
    pub enable_oss: bool,
    /// Random crop and flip on image inputs.
    pub augment: bool,
    pub seed: u64,
    /// Chunk size for evaluation forward passes.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hyper = HeadHyper::default();
        Self {
            dataset: SYNTHETIC_DATASET.to_string(),
            split_file: None,
            trials: 5,
            trial: None,
            known_classes: None,
            pinned: Vec::new(),
            backbone: Architecture::small_cnn(),
            embed_dim: 128,
            batch_size: 64,
            epochs: 200,
            lr: 1e-3,
            init_scale: 16.0,
            freeze_scale: false,
            scale_lr_factor: 0.1,
            margin: hyper.margin,
            threshold: hyper.threshold,
            lambda: hyper.lambda,
            descriptors: None,
            descriptor_mode: DescriptorMode::default(),
            scoring: ScoringMode::default(),
            enable_mlas: true,
            enable_oss: true,
            augment: true,
            seed: 2023,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.eval_batch == 0 {
            return fail("batch sizes must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if !(self.init_scale >= SCALE_FLOOR && self.init_scale.is_finite()) {
            return fail(format!(
                "init_scale {} is below the floor {SCALE_FLOOR}",
                self.init_scale
            ));
        }
        if !(self.scale_lr_factor >= 0.0 && self.scale_lr_factor.is_finite()) {
            return fail(format!("scale_lr_factor {} must be non-negative", self.scale_lr_factor));
        }
        if ![self.margin, self.threshold, self.lambda].iter().all(|v| v.is_finite()) {
            return fail("margin, threshold and lambda must be finite".into());
        }
        if self.trials == 0 {
            return fail("trials must be positive".into());
        }
        if let Some(k) = self.trial {
            if self.split_file.is_none() && k >= self.trials {
                return fail(format!("trial {k} outside 0..{}", self.trials));
            }
        }
        Ok(())
    }

    pub fn hyper(&self) -> HeadHyper {
        HeadHyper {
            margin: self.margin,
            threshold: self.threshold,
            lambda: self.lambda,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            hyper: self.hyper(),
            enable_mlas: self.enable_mlas,
            enable_oss: self.enable_oss,
        }
    }

    pub fn model_config(&self, input: InputShape, num_classes: usize) -> ModelConfig {
        ModelConfig {
            arch: self.backbone.clone(),
            input,
            embed_dim: self.embed_dim,
            num_classes,
            init_scale: self.init_scale,
            hyper: self.hyper(),
        }
    }

    /// Descriptors drawn per batch (zero when the open-space term is off).
    pub fn descriptor_count(&self) -> usize {
        if self.enable_oss {
            self.descriptors.unwrap_or(self.batch_size)
        } else {
            0
        }
    }

    /// The plain cosine cross-entropy configuration: no margin term, no
    /// open-space term, fixed scale and plain softmax scoring.
    pub fn baseline(&self) -> Self {
        Self {
            enable_mlas: false,
            enable_oss: false,
            freeze_scale: true,
            scoring: ScoringMode::Plain,
            ..self.clone()
        }
    }

    /// Short method name derived from the loss toggles.
    pub fn method(&self) -> &'static str {
        match (self.enable_mlas, self.enable_oss) {
            (false, false) => "cosine",
            (true, false) => "mlas",
            (false, true) => "oss",
            (true, true) => "omcl",
        }
    }

    /// SHA-256 of the configuration with the trial selector cleared, so all
    /// trials of one run share a digest.
    pub fn digest(&self) -> String {
        let canonical = Self {
            trial: None,
            ..self.clone()
        };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
