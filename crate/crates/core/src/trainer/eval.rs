use std::collections::BTreeMap;

use super::{TrainConfig, TrainError};
use crate::data::{Samples, TrialData};
use crate::metrics::{auroc, closed_accuracy, oscr, EvalReport, ScoredPrediction, OSCR_CONVENTION};
use crate::model::{Model, Prediction, ScoringMode};

/// Label written for the checkpoint every report is computed from.
pub const CHECKPOINT_SELECTION: &str = "final-epoch";

fn check_classes(model: &Model, data: &TrialData) -> Result<(), TrainError> {
    let (have, want) = (model.head.num_classes(), data.num_classes);
    if have != want {
        return Err(TrainError::Config(format!(
            "model has {have} known classes but the split has {want}"
        )));
    }
    Ok(())
}

/// Predictions for every sample, in order, without augmentation.
pub fn predict_samples(
    model: &Model,
    data: &TrialData,
    samples: &Samples,
    mode: ScoringMode,
    chunk: usize,
) -> Result<Vec<Prediction>, TrainError> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for part in idx.chunks(chunk.max(1)) {
        let batch = data.batch(samples, part, None);
        out.extend(model.predict(&batch.images, mode)?);
    }
    Ok(out)
}

/// Known test predictions followed by unknown test predictions.
pub fn scored_predictions(
    model: &Model,
    data: &TrialData,
    mode: ScoringMode,
    chunk: usize,
) -> Result<Vec<ScoredPrediction>, TrainError> {
    check_classes(model, data)?;
    let known = predict_samples(model, data, &data.test_known, mode, chunk)?;
    let unknown = predict_samples(model, data, &data.test_unknown, mode, chunk)?;
    let mut out: Vec<ScoredPrediction> = known
        .iter()
        .zip(&data.test_known.labels)
        .map(|(p, &y)| ScoredPrediction {
            known_score: p.known_score,
            predicted: p.class,
            truth: Some(y),
        })
        .collect();
    out.extend(unknown.iter().map(|p| ScoredPrediction {
        known_score: p.known_score,
        predicted: p.class,
        truth: None,
    }));
    Ok(out)
}

/// Closed-set accuracy on known test samples, and AUROC and OSCR of known
/// against unknown test samples.
pub fn evaluate_trial(model: &Model, data: &TrialData, cfg: &TrainConfig) -> Result<EvalReport, TrainError> {
    let preds = scored_predictions(model, data, cfg.scoring, cfg.eval_batch)?;
    report_from_predictions(&preds, data.split.trial, cfg)
}

pub fn report_from_predictions(
    preds: &[ScoredPrediction],
    trial: usize,
    cfg: &TrainConfig,
) -> Result<EvalReport, TrainError> {
    let known: Vec<f64> = preds
        .iter()
        .filter(|p| p.truth.is_some())
        .map(|p| p.known_score)
        .collect();
    let unknown: Vec<f64> = preds
        .iter()
        .filter(|p| p.truth.is_none())
        .map(|p| p.known_score)
        .collect();
    Ok(EvalReport {
        trial,
        acc_c: closed_accuracy(preds)?,
        auroc_o: auroc(&known, &unknown)?,
        oscr_o: oscr(preds)?,
        n_known: known.len(),
        n_unknown: unknown.len(),
        config_digest: cfg.digest(),
        label: cfg.method().to_string(),
        enable_mlas: cfg.enable_mlas,
        enable_oss: cfg.enable_oss,
        scoring: serde_json::to_value(cfg.scoring)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        checkpoint: CHECKPOINT_SELECTION.to_string(),
        oscr_convention: OSCR_CONVENTION.to_string(),
    })
}

/// CSV of test-set embeddings, at most `cap` rows per source class.
/// Columns: `sample_id,true_class,z0,...`; unknown samples are labelled `UNKNOWN`.
pub fn export_embeddings(model: &Model, data: &TrialData, cap: usize, chunk: usize) -> Result<String, TrainError> {
    check_classes(model, data)?;
    let d = model.head.embed_dim();
    let mut out = String::from("sample_id,true_class");
    for j in 0..d {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for samples in [&data.test_known, &data.test_unknown] {
        let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
        let idx: Vec<usize> = (0..samples.len())
            .filter(|&i| {
                let n = taken.entry(samples.source_class[i]).or_insert(0);
                *n += 1;
                *n <= cap
            })
            .collect();
        for part in idx.chunks(chunk.max(1)) {
            let batch = data.batch(samples, part, None);
            let z = model.embed(&batch.images)?;
            for (r, &i) in part.iter().enumerate() {
                let label = samples.labels[i];
                let class = if label < data.num_classes {
                    label.to_string()
                } else {
                    "UNKNOWN".to_string()
                };
                out.push_str(&format!("{},{class}", samples.ids[i]));
                for v in z.row(r) {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}
