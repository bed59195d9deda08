use serde::{Deserialize, Serialize};

use super::head::{HeadHyper, NORM_FLOOR};
use super::ModelError;
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

/// Which terms of the objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub hyper: HeadHyper,
    pub enable_mlas: bool,
    pub enable_oss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            hyper: HeadHyper::default(),
            enable_mlas: true,
            enable_oss: true,
        }
    }
}

impl LossConfig {
    /// Plain cosine cross-entropy.
    pub fn baseline(hyper: HeadHyper) -> Self {
        Self {
            hyper,
            enable_mlas: false,
            enable_oss: false,
        }
    }
}

/// Loss node plus mean negative log-likelihood of each term, for logging.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// `s · cos` logits of training rows followed by descriptor rows.
    pub logits: Var,
    pub cos_nll: f64,
    pub mlas_nll: Option<f64>,
    pub oss_nll: Option<f64>,
}

impl LossTerms {
    pub fn value(&self, g: &Graph) -> f64 {
        g.value(self.total).item()
    }
}

/// One of the three log-likelihood terms of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossTerm {
    /// `log S_cos` on training rows.
    Cos,
    /// `log S_MLAS` on training rows.
    Mlas,
    /// `log S_OSS` on descriptor rows.
    Oss,
}

impl LossTerm {
    pub const ALL: [LossTerm; 3] = [LossTerm::Cos, LossTerm::Mlas, LossTerm::Oss];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Cos => "cos",
            LossTerm::Mlas => "mlas",
            LossTerm::Oss => "oss",
        }
    }
}

/// `s · cos` logits of every row of `z` against the class rows of `weights`.
pub fn head_logits(g: &mut Graph, z: Var, weights: Var, scale: Var) -> Result<Var, AutodiffError> {
    let zn = g.l2_normalize_rows_clamped(z, NORM_FLOOR)?;
    let wn = g.l2_normalize_rows_clamped(weights, NORM_FLOOR)?;
    let wt = g.transpose(wn)?;
    let cos = g.matmul(zn, wt)?;
    g.scale_by(cos, scale)
}

/// Sum of one term's log-likelihood over the rows it covers.
///
/// `logits` holds `N` training rows (labels in `labels`) followed by
/// descriptor rows; `scale` is the node the logits were scaled by.
pub fn term_log_likelihood(
    g: &mut Graph,
    term: LossTerm,
    logits: Var,
    scale: Var,
    labels: &[usize],
    hyper: &HeadHyper,
) -> Result<Var, AutodiffError> {
    let (rows, classes) = (g.value(logits).rows(), g.value(logits).row_len());
    let n = labels.len();
    let on_train = |i: usize| if i < n { 1.0 } else { 0.0 };
    let mask = match term {
        LossTerm::Cos | LossTerm::Mlas => (0..rows).map(on_train).collect(),
        LossTerm::Oss => (0..rows).map(|i| 1.0 - on_train(i)).collect(),
    };
    let mask = g.constant(Tensor::vector(mask));
    let mut target: Vec<usize> = labels.to_vec();
    target.resize(rows, 0);

    let threshold = |g: &mut Graph| {
        let t = g.constant(Tensor::scalar(hyper.threshold));
        g.scale_by(t, scale)
    };
    let picked = match term {
        LossTerm::Cos => {
            let lsm = g.log_softmax_rows(logits, None)?;
            g.pick(lsm, target)?
        }
        LossTerm::Mlas => {
            let mut shift = Tensor::zeros(&[rows, classes]);
            for (i, &y) in labels.iter().enumerate() {
                shift.data_mut()[i * classes + y] = hyper.margin;
            }
            let shift = g.constant(shift);
            let shift = g.scale_by(shift, scale)?;
            let shifted = g.sub(logits, shift)?;
            let t = threshold(g)?;
            let lsm = g.log_softmax_rows(shifted, Some(t))?;
            g.pick(lsm, target)?
        }
        LossTerm::Oss => {
            let t = threshold(g)?;
            let lsm = g.log_softmax_rows(logits, Some(t))?;
            g.pick(lsm, vec![classes; rows])?
        }
    };
    let masked = g.mul(picked, mask)?;
    Ok(g.sum(masked))
}

/// Open margin cosine loss over `N` training embeddings and `M` descriptors:
///
/// `-(1/(N+M)) Σ [ I·log S_cos + λ·I·log S_MLAS + λ·(1-I)·log S_OSS ]`
///
/// where `I` is 1 on training rows and 0 on descriptor rows. Descriptors enter
/// as constants concatenated below `z_train`, so they reach `weights` and
/// `scale` but never the backbone. Disabled terms are dropped; without the
/// open-space term descriptors are ignored.
pub fn omcl_loss(
    g: &mut Graph,
    z_train: Var,
    labels: &[usize],
    descriptors: Option<&Tensor>,
    weights: Var,
    scale: Var,
    cfg: &LossConfig,
) -> Result<LossTerms, ModelError> {
    let n = labels.len();
    if g.value(z_train).rows() != n {
        return Err(ModelError::InvalidConfig(format!(
            "{} embeddings but {n} labels",
            g.value(z_train).rows()
        )));
    }
    let classes = g.value(weights).rows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(ModelError::InvalidConfig(format!(
            "label {bad} outside {classes} known classes"
        )));
    }
    let desc = descriptors.filter(|d| cfg.enable_oss && d.rows() > 0);
    let m = desc.map_or(0, Tensor::rows);
    let rows = n + m;
    if rows == 0 {
        return Err(ModelError::InvalidConfig("empty batch".into()));
    }

    let z_all = match desc {
        Some(d) => {
            let dv = g.constant(d.clone());
            g.concat_rows(z_train, dv)?
        }
        None => z_train,
    };
    let logits = head_logits(g, z_all, weights, scale)?;
    let mean_nll = |g: &Graph, v: Var, count: usize| -g.value(v).item() / count.max(1) as f64;

    let mut total = term_log_likelihood(g, LossTerm::Cos, logits, scale, labels, &cfg.hyper)?;
    let cos_nll = mean_nll(g, total, n);
    let mut extra = |g: &mut Graph, term: LossTerm, count: usize| -> Result<f64, ModelError> {
        let sum = term_log_likelihood(g, term, logits, scale, labels, &cfg.hyper)?;
        let weighted = g.scale(sum, cfg.hyper.lambda);
        total = g.add(total, weighted)?;
        Ok(mean_nll(g, sum, count))
    };
    let mlas_nll = if cfg.enable_mlas {
        Some(extra(g, LossTerm::Mlas, n)?)
    } else {
        None
    };
    let oss_nll = if m > 0 { Some(extra(g, LossTerm::Oss, m)?) } else { None };

    let loss = g.scale(total, -1.0 / rows as f64);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLoss { value });
    }
    Ok(LossTerms {
        total: loss,
        logits,
        cos_nll,
        mlas_nll,
        oss_nll,
    })
}
