//! Cosine classification head and its closed-form probabilities.
//!
//! Logits are `s · cos θ_j` where `θ_j` is the angle between an embedding and
//! the direction of class row `W_j`. The unknown class has no weight row; its
//! logit is the fixed threshold `s · t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{log_sum_exp, Graph, Tensor, Var};

/// Lower bound kept on the learnable scale after every update.
pub const SCALE_FLOOR: f64 = 1.0;

/// Denominator floor for L2 normalization on the training path.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadHyper {
    /// Additive angular margin `m` on the true-class cosine (sign unconstrained).
    pub margin: f64,
    /// Threshold logit `t` of the implicit unknown channel.
    pub threshold: f64,
    /// Weight `λ` of the margin and open-space terms.
    pub lambda: f64,
}

impl Default for HeadHyper {
    fn default() -> Self {
        Self {
            margin: -0.1,
            threshold: 0.1,
            lambda: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosineHead {
    /// `C × d`; rows are normalized before use.
    pub weights: Tensor,
    /// Learnable scale `s`.
    pub scale: f64,
    pub hyper: HeadHyper,
}

/// Which softmax produces the test-time known-class score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Softmax over the C known logits plus the threshold channel.
    #[default]
    ThresholdChannel,
    /// Plain C-way cosine softmax.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// 0-based known class with the highest probability; lowest index wins ties.
    pub class: usize,
    /// Maximum known-class probability; low values indicate an unknown.
    pub known_score: f64,
}

impl CosineHead {
    pub fn new(
        num_classes: usize,
        embed_dim: usize,
        scale: f64,
        hyper: HeadHyper,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if num_classes == 0 || embed_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "head needs at least one class and dimension".into(),
            ));
        }
        if !(scale > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let data = (0..num_classes * embed_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Ok(Self {
            weights: Tensor::new(vec![num_classes, embed_dim], data)?,
            scale,
            hyper,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + 1
    }

    /// Cosine similarities `B × C` between embeddings and class directions.
    pub fn cosines(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let wv = g.constant(self.weights.clone());
        let c = cosine_graph(&mut g, zv, wv, None)?;
        Ok(g.value(c).clone())
    }

    /// `s · cos θ`, each entry in `[-s, s]`.
    pub fn logits(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let mut c = self.cosines(z)?;
        c.data_mut().iter_mut().for_each(|x| *x *= self.scale);
        Ok(c)
    }

    pub fn predict_embeddings(&self, z: &Tensor, mode: ScoringMode) -> Result<Vec<Prediction>, ModelError> {
        let cos = self.cosines(z)?;
        Ok((0..cos.rows())
            .map(|i| predict_row(cos.row(i), self.scale, self.hyper.threshold, mode))
            .collect())
    }
}

/// `normalize(z) · normalize(W)ᵀ` on the graph. With `floor`, rows are divided
/// by `max(norm, floor)`; without it a zero row is an error.
pub fn cosine_graph(g: &mut Graph, z: Var, w: Var, floor: Option<f64>) -> Result<Var, ModelError> {
    let (zn, wn) = match floor {
        Some(f) => (g.l2_normalize_rows_clamped(z, f)?, g.l2_normalize_rows_clamped(w, f)?),
        None => (
            g.l2_normalize_rows(z).map_err(degenerate)?,
            g.l2_normalize_rows(w).map_err(degenerate)?,
        ),
    };
    let wt = g.transpose(wn)?;
    Ok(g.matmul(zn, wt)?)
}

fn degenerate(e: crate::autodiff::AutodiffError) -> ModelError {
    match e {
        crate::autodiff::AutodiffError::DegenerateRow { row, .. } => ModelError::DegenerateInput { row },
        other => other.into(),
    }
}

/// Cosine logits `s · ⟨W_j/‖W_j‖, z_i/‖z_i‖⟩` for plain matrices.
pub fn cosine_logits(z: &Tensor, weights: &Tensor, scale: f64) -> Result<Tensor, ModelError> {
    let head = CosineHead {
        weights: weights.clone(),
        scale,
        hyper: HeadHyper::default(),
    };
    head.logits(z)
}

/// Plain cosine softmax probability of class `y`.
pub fn cos_prob(cos_row: &[f64], y: usize, scale: f64) -> f64 {
    let logits: Vec<f64> = cos_row.iter().map(|c| scale * c).collect();
    (logits[y] - log_sum_exp(&logits)).exp()
}

/// Softmax probability of class `y` after subtracting `margin` from its cosine,
/// with an optional threshold channel `s · t` in the denominator.
///
/// `margin = 0` and `threshold = None` give [`cos_prob`].
pub fn margin_prob(cos_row: &[f64], y: usize, scale: f64, margin: f64, threshold: Option<f64>) -> f64 {
    let mut logits: Vec<f64> = cos_row.iter().map(|c| scale * c).collect();
    logits[y] = scale * (cos_row[y] - margin);
    let target = logits[y];
    logits.extend(threshold.map(|t| scale * t));
    (target - log_sum_exp(&logits)).exp()
}

/// Margin probability with the threshold channel: the per-sample quantity
/// the margin term of the loss maximizes.
pub fn mlas_prob(cos_row: &[f64], y: usize, scale: f64, hyper: &HeadHyper) -> f64 {
    margin_prob(cos_row, y, scale, hyper.margin, Some(hyper.threshold))
}

/// Probability mass of the implicit unknown channel.
pub fn oss_prob(cos_row: &[f64], scale: f64, threshold: f64) -> f64 {
    let mut logits: Vec<f64> = cos_row.iter().map(|c| scale * c).collect();
    logits.push(scale * threshold);
    (scale * threshold - log_sum_exp(&logits)).exp()
}

/// Known-class probabilities of one row; with the threshold channel they
/// sum to `1 - oss_prob`.
pub fn known_probs(cos_row: &[f64], scale: f64, threshold: f64, mode: ScoringMode) -> Vec<f64> {
    let mut logits: Vec<f64> = cos_row.iter().map(|c| scale * c).collect();
    if mode == ScoringMode::ThresholdChannel {
        logits.push(scale * threshold);
    }
    let lse = log_sum_exp(&logits);
    cos_row.iter().map(|c| (scale * c - lse).exp()).collect()
}

pub fn predict_row(cos_row: &[f64], scale: f64, threshold: f64, mode: ScoringMode) -> Prediction {
    let probs = known_probs(cos_row, scale, threshold, mode);
    let (class, known_score) =
        probs.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (j, p)| if p > best.1 { (j, p) } else { best },
        );
    Prediction { class, known_score }
}
