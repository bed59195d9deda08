//! Finite-difference checks of the loss terms at random head configurations.

use rand::Rng;
use serde::Serialize;

use super::descriptors::{sample_descriptors, DescriptorMode};
use super::head::HeadHyper;
use super::loss::{head_logits, omcl_loss, term_log_likelihood, LossConfig, LossTerm};
use super::ModelError;
use crate::autodiff::{gradcheck, AutodiffError, Graph, Tensor, Var};
use crate::rng::{stream_rng, Stream};

/// Central-difference step used by [`check_loss_gradients`].
pub const LOSS_CHECK_STEP: f64 = 1e-4;

/// Point at which the loss gradients are checked.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCheckCase {
    pub hyper: HeadHyper,
    pub scale: f64,
    pub embeddings: Tensor,
    pub labels: Vec<usize>,
    pub weights: Tensor,
    pub descriptors: Tensor,
}

impl LossCheckCase {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.row_len()
    }
}

fn gaussian_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `count` cases with `C ∈ 2..=8`, `d ∈ 2..=16`, `m ∈ [-0.3, 0.3]`,
/// `t ∈ [-0.5, 0.5]`, `s ∈ [1, 32]`, 2 to 6 training rows and 1 to 4 descriptors.
pub fn random_loss_cases(count: usize, seed: u64) -> Vec<LossCheckCase> {
    (0..count as u64)
        .map(|k| {
            let mut rng = stream_rng(seed, Stream::Noise, k);
            let classes = rng.random_range(2..=8);
            let dim = rng.random_range(2..=16);
            let hyper = HeadHyper {
                margin: rng.random_range(-0.3..=0.3),
                threshold: rng.random_range(-0.5..=0.5),
                lambda: rng.random_range(0.1..=1.0),
            };
            let scale = rng.random_range(1.0..=32.0);
            let n = rng.random_range(2..=6);
            let m = rng.random_range(1..=4);
            let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let embeddings = gaussian_tensor(&mut rng, &[n, dim]);
            let weights = gaussian_tensor(&mut rng, &[classes, dim]);
            let mut drng = stream_rng(seed, Stream::Descriptors, k);
            let descriptors =
                sample_descriptors(m, dim, scale, DescriptorMode::CubeProject, classes, &mut drng).features;
            LossCheckCase {
                hyper,
                scale,
                embeddings,
                labels,
                weights,
                descriptors,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermCheck {
    /// `cos`, `mlas`, `oss` or `omcl`.
    pub term: &'static str,
    pub max_rel_error: f64,
    pub coords: usize,
}

fn flatten(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        _ => AutodiffError::NonFinite { input: 0, index: 0 },
    }
}

/// Checks the gradient of each single term (as `-(1/rows)·Σ log S`) and of
/// the full loss with respect to embeddings, class weights and the scale.
pub fn check_loss_gradients(case: &LossCheckCase, step: f64, tolerance: f64) -> Result<Vec<TermCheck>, AutodiffError> {
    let point = [
        case.embeddings.clone(),
        case.weights.clone(),
        Tensor::scalar(case.scale),
    ];
    let mut out = Vec::new();
    for term in LossTerm::ALL {
        let f = |g: &mut Graph, v: &[Var]| {
            let z = match term {
                LossTerm::Oss => {
                    let d = g.constant(case.descriptors.clone());
                    g.concat_rows(v[0], d)?
                }
                _ => v[0],
            };
            let logits = head_logits(g, z, v[1], v[2])?;
            let rows = g.value(logits).rows();
            let sum = term_log_likelihood(g, term, logits, v[2], &case.labels, &case.hyper)?;
            Ok(g.scale(sum, -1.0 / rows as f64))
        };
        let report = gradcheck(f, &point, step, tolerance)?;
        out.push(TermCheck {
            term: term.name(),
            max_rel_error: report.max_rel_error(),
            coords: report.coords.len(),
        });
    }
    let cfg = LossConfig {
        hyper: case.hyper,
        ..LossConfig::default()
    };
    let f = |g: &mut Graph, v: &[Var]| {
        omcl_loss(g, v[0], &case.labels, Some(&case.descriptors), v[1], v[2], &cfg)
            .map(|t| t.total)
            .map_err(flatten)
    };
    let report = gradcheck(f, &point, step, tolerance)?;
    out.push(TermCheck {
        term: "omcl",
        max_rel_error: report.max_rel_error(),
        coords: report.coords.len(),
    });
    Ok(out)
}
