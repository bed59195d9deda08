//! Python bindings for the open-set toolkit.

use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    pyo3::exceptions::PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<omcl_core::autodiff::Tensor> {
    omcl_core::autodiff::Tensor::from_rows(rows).map_err(value_error)
}

fn rows(t: &omcl_core::autodiff::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[pymodule]
mod omcl {
    use omcl_core::data::make_splits as draw_splits;
    use omcl_core::metrics::{self, ScoredPrediction};
    use omcl_core::model::{self, DescriptorMode, HeadHyper};
    use omcl_core::rng::{stream_rng, Stream};
    use omcl_core::trainer::{run_trials, TrainConfig};
    use pyo3::prelude::*;

    use super::{matrix, rows, value_error};

    /// Scaled cosine logits `scale * cos(z_i, w_j)`.
    #[pyfunction]
    fn cosine_logits(z: Vec<Vec<f64>>, weights: Vec<Vec<f64>>, scale: f64) -> PyResult<Vec<Vec<f64>>> {
        let out = model::cosine_logits(&matrix(&z)?, &matrix(&weights)?, scale).map_err(value_error)?;
        Ok(rows(&out))
    }

    fn check_label(cos_row: &[f64], label: usize) -> PyResult<()> {
        if label >= cos_row.len() {
            return Err(value_error(format!("label {label} outside 0..{}", cos_row.len())));
        }
        Ok(())
    }

    /// Plain cosine-softmax probability of `label`.
    #[pyfunction]
    fn cos_prob(cos_row: Vec<f64>, label: usize, scale: f64) -> PyResult<f64> {
        check_label(&cos_row, label)?;
        Ok(model::cos_prob(&cos_row, label, scale))
    }

    /// Probability of `label` with the margin on its cosine and the threshold channel in the denominator.
    #[pyfunction]
    #[pyo3(signature = (cos_row, label, scale, margin = -0.1, threshold = 0.1))]
    fn mlas_prob(cos_row: Vec<f64>, label: usize, scale: f64, margin: f64, threshold: f64) -> PyResult<f64> {
        check_label(&cos_row, label)?;
        let hyper = HeadHyper {
            margin,
            threshold,
            ..HeadHyper::default()
        };
        Ok(model::mlas_prob(&cos_row, label, scale, &hyper))
    }

    /// Probability of the threshold channel.
    #[pyfunction]
    #[pyo3(signature = (cos_row, scale, threshold = 0.1))]
    fn oss_prob(cos_row: Vec<f64>, scale: f64, threshold: f64) -> f64 {
        model::oss_prob(&cos_row, scale, threshold)
    }

    /// `count` descriptors of norm `scale` in `dim` dimensions.
    #[pyfunction]
    #[pyo3(signature = (count, dim, scale, seed = 0, mode = "cube-project"))]
    fn sample_descriptors(count: usize, dim: usize, scale: f64, seed: u64, mode: &str) -> PyResult<Vec<Vec<f64>>> {
        let mode: DescriptorMode = serde_json::from_value(serde_json::json!(mode)).map_err(value_error)?;
        if dim == 0 {
            return Err(value_error("dim must be positive"));
        }
        let batch = model::sample_descriptors(
            count,
            dim,
            scale,
            mode,
            0,
            &mut stream_rng(seed, Stream::Descriptors, 0),
        );
        Ok(rows(&batch.features))
    }

    #[pyfunction]
    fn auroc(known: Vec<f64>, unknown: Vec<f64>) -> PyResult<f64> {
        metrics::auroc(&known, &unknown).map_err(value_error)
    }

    fn predictions(scores: &[f64], predicted: &[usize], truth: &[Option<usize>]) -> PyResult<Vec<ScoredPrediction>> {
        if scores.len() != predicted.len() || scores.len() != truth.len() {
            return Err(value_error("scores, predicted and truth differ in length"));
        }
        Ok(scores
            .iter()
            .zip(predicted)
            .zip(truth)
            .map(|((&known_score, &predicted), &truth)| ScoredPrediction {
                known_score,
                predicted,
                truth,
            })
            .collect())
    }

    /// Area under the correct-classification / false-positive curve. `truth` is `None` for unknown samples.
    #[pyfunction]
    fn oscr(scores: Vec<f64>, predicted: Vec<usize>, truth: Vec<Option<usize>>) -> PyResult<f64> {
        metrics::oscr(&predictions(&scores, &predicted, &truth)?).map_err(value_error)
    }

    #[pyfunction]
    fn closed_accuracy(predicted: Vec<usize>, truth: Vec<Option<usize>>) -> PyResult<f64> {
        let scores = vec![0.0; predicted.len()];
        metrics::closed_accuracy(&predictions(&scores, &predicted, &truth)?).map_err(value_error)
    }

    /// Known/unknown class partitions as `(known, unknown)` pairs.
    #[pyfunction]
    #[pyo3(signature = (classes, trials = 5, seed = 2023))]
    fn make_splits(classes: usize, trials: usize, seed: u64) -> PyResult<Vec<(Vec<usize>, Vec<usize>)>> {
        let splits = draw_splits(classes, trials, seed, &[], None).map_err(value_error)?;
        Ok(splits.into_iter().map(|s| (s.known, s.unknown)).collect())
    }

    /// Trains the trials selected by a JSON config (missing fields take defaults)
    /// and returns their reports as a JSON list.
    #[pyfunction]
    #[pyo3(signature = (config_json = "{}"))]
    fn train(py: Python<'_>, config_json: &str) -> PyResult<String> {
        let cfg: TrainConfig = serde_json::from_str(config_json).map_err(value_error)?;
        cfg.validate().map_err(value_error)?;
        let reports = py
            .detach(|| run_trials(&cfg, &mut |_| {}))
            .map_err(value_error)?
            .into_iter()
            .map(|t| t.record.report)
            .collect::<Vec<_>>();
        serde_json::to_string(&reports).map_err(value_error)
    }

    /// Largest relative gradient error over `cases` random loss configurations.
    #[pyfunction]
    #[pyo3(signature = (cases = 20, seed = 2023))]
    fn gradcheck(cases: usize, seed: u64) -> PyResult<f64> {
        let mut worst: f64 = 0.0;
        for case in model::random_loss_cases(cases, seed) {
            for check in model::check_loss_gradients(&case, model::LOSS_CHECK_STEP, 1e-4).map_err(value_error)? {
                worst = worst.max(check.max_rel_error);
            }
        }
        Ok(worst)
    }
}
