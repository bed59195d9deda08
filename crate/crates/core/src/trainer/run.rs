use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate_trial, TrainConfig, TrainError};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::data::{batch_indices, AugmentConfig, TrialData};
use crate::metrics::EvalReport;
use crate::model::{omcl_loss, sample_descriptors, Checkpoint, Model, ModelError, SCALE_FLOOR};
use crate::rng::{derive_seed, stream_rng, RngState, Stream};

/// Mean loss components over one epoch and the scale at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub trial: usize,
    pub epoch: usize,
    pub loss: f64,
    pub cos_nll: f64,
    pub mlas_nll: Option<f64>,
    pub oss_nll: Option<f64>,
    pub scale: f64,
    /// Accuracy of the plain cosine logits on training samples (descriptors excluded).
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial: usize,
    pub config_digest: String,
    pub num_params: usize,
    pub epochs: Vec<EpochLog>,
    /// Loss of every batch in training order.
    pub batch_losses: Vec<f64>,
    /// Scale after each epoch.
    pub scale_trace: Vec<f64>,
    /// Not serialized, so written records are reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub report: EvalReport,
}

/// Final-epoch model of one trial with its record.
#[derive(Clone, Debug)]
pub struct TrainedTrial {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// Seed of everything trial-specific except the split itself.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, trial as u64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (j, &v)| if v > best.1 { (j, v) } else { best },
        )
        .0
}

/// Trains one trial for `cfg.epochs` epochs and evaluates the final model.
/// `on_epoch` sees every epoch log as soon as it is complete.
pub fn train_trial(
    cfg: &TrainConfig,
    data: &TrialData,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainedTrial, TrainError> {
    cfg.validate()?;
    let started = Instant::now();
    let trial = data.split.trial;
    let tseed = trial_seed(cfg.seed, trial);
    let classes = data.num_classes;
    if data.train.is_empty() {
        return Err(TrainError::Config("no training samples".into()));
    }
    let mut model = Model::new(
        &cfg.model_config(data.input, classes),
        &mut stream_rng(cfg.seed, Stream::Init, trial as u64),
    )?;
    let mut backbone_state: Vec<AdamState> = model.backbone.params.iter().map(AdamState::for_tensor).collect();
    let mut head_state = AdamState::for_tensor(&model.head.weights);
    let mut scale_state = AdamState::new(1, AdamConfig::default());
    let loss_cfg = cfg.loss_config();
    let descriptors = cfg.descriptor_count();
    let augment = (cfg.augment && data.input.height > 1 && data.input.width > 1).then(AugmentConfig::default);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut batch_losses = Vec::new();
    let mut desc_state = RngState::capture(&stream_rng(tseed, Stream::Descriptors, 0));
    for epoch in 0..cfg.epochs {
        let mut aug_rng = stream_rng(tseed, Stream::Augment, epoch as u64);
        let mut desc_rng = stream_rng(tseed, Stream::Descriptors, epoch as u64);
        let (mut loss_sum, mut cos_sum, mut mlas_sum, mut oss_sum) = (0.0, 0.0, 0.0, 0.0);
        let (mut correct, mut seen) = (0usize, 0usize);
        let batches = batch_indices(data.train.len(), cfg.batch_size, tseed, epoch as u64);
        for (b, idx) in batches.iter().enumerate() {
            let batch = data.batch(&data.train, idx, augment.as_ref().map(|a| (a, &mut aug_rng)));
            let mut g = Graph::new();
            let bp = model.backbone.bind(&mut g);
            let w = g.param(model.head.weights.clone());
            let s = g.param(Tensor::scalar(model.head.scale));
            let x = g.constant(batch.images);
            let z = model.backbone.forward(&mut g, &bp, x)?;
            let desc = (descriptors > 0).then(|| {
                sample_descriptors(
                    descriptors,
                    cfg.embed_dim,
                    model.head.scale,
                    cfg.descriptor_mode,
                    classes,
                    &mut desc_rng,
                )
                .features
            });
            let terms = match omcl_loss(&mut g, z, &batch.labels, desc.as_ref(), w, s, &loss_cfg) {
                Ok(t) => t,
                Err(ModelError::NonFiniteLoss { value }) => {
                    return Err(TrainError::NonFinite { epoch, batch: b, value })
                }
                Err(e) => return Err(e.into()),
            };
            let loss = terms.value(&g);
            let logits = g.value(terms.logits);
            for (i, &y) in batch.labels.iter().enumerate() {
                correct += usize::from(argmax(logits.row(i)) == y);
            }
            seen += batch.labels.len();

            let grads = g.backward(terms.total)?;
            for ((param, var), state) in model.backbone.params.iter_mut().zip(&bp).zip(&mut backbone_state) {
                adam_step(param, &grads.wrt(*var), state, cfg.lr)?;
            }
            adam_step(&mut model.head.weights, &grads.wrt(w), &mut head_state, cfg.lr)?;
            if !cfg.freeze_scale {
                let mut sv = Tensor::scalar(model.head.scale);
                adam_step(&mut sv, &grads.wrt(s), &mut scale_state, cfg.lr * cfg.scale_lr_factor)?;
                model.head.scale = sv.item().max(SCALE_FLOOR);
            }
            if !model.head.scale.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    value: model.head.scale,
                });
            }

            batch_losses.push(loss);
            loss_sum += loss;
            cos_sum += terms.cos_nll;
            mlas_sum += terms.mlas_nll.unwrap_or(0.0);
            oss_sum += terms.oss_nll.unwrap_or(0.0);
        }
        desc_state = RngState::capture(&desc_rng);
        let nb = batches.len() as f64;
        let log = EpochLog {
            trial,
            epoch,
            loss: loss_sum / nb,
            cos_nll: cos_sum / nb,
            mlas_nll: cfg.enable_mlas.then_some(mlas_sum / nb),
            oss_nll: (descriptors > 0).then_some(oss_sum / nb),
            scale: model.head.scale,
            train_acc: correct as f64 / seen.max(1) as f64,
        };
        on_epoch(&log);
        epochs.push(log);
    }

    let report = evaluate_trial(&model, data, cfg)?;
    let record = RunRecord {
        trial,
        config_digest: cfg.digest(),
        num_params: model.num_params(),
        scale_trace: epochs.iter().map(|e| e.scale).collect(),
        epochs,
        batch_losses,
        wall_seconds: started.elapsed().as_secs_f64(),
        report,
    };
    let checkpoint = Checkpoint {
        model,
        stats: Some(data.stats.clone()),
        rng: desc_state,
        metadata: serde_json::json!({
            "config": cfg,
            "trial": trial,
            "config_digest": record.config_digest,
            "known": data.split.known,
            "unknown": data.split.unknown,
        }),
    };
    Ok(TrainedTrial { record, checkpoint })
}
