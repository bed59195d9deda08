//! Closed-set accuracy, AUROC and OSCR over known/unknown test scores.
//!
//! Known samples are positives. A threshold `θ` accepts every sample whose
//! known-score is `≥ θ`.

mod report;

pub use report::{
    aggregate_trials, render_ablation_table, render_table, EvalReport, MetricSummary, TrialSummary, OSCR_CONVENTION,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("reports come from different configurations ({0} vs {1})")]
    MixedConfigs(String, String),
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

/// One test sample as seen by the metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPrediction {
    pub known_score: f64,
    /// Always a known class.
    pub predicted: usize,
    /// `None` for samples of unknown classes.
    pub truth: Option<usize>,
}

impl ScoredPrediction {
    pub fn is_correct(&self) -> bool {
        self.truth == Some(self.predicted)
    }
}

/// Fraction of known-class samples whose prediction matches their label.
pub fn closed_accuracy(predictions: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    let known: Vec<_> = predictions.iter().filter(|p| p.truth.is_some()).collect();
    if known.is_empty() {
        return Err(MetricsError::Empty("known-class predictions"));
    }
    Ok(known.iter().filter(|p| p.is_correct()).count() as f64 / known.len() as f64)
}

fn check_finite(xs: &[f64]) -> Result<(), MetricsError> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(MetricsError::NonFinite(*x)),
        None => Ok(()),
    }
}

/// Probability that a random known sample outscores a random unknown one,
/// ties counted as one half (Mann–Whitney U with mid-ranks).
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64, MetricsError> {
    if known.is_empty() {
        return Err(MetricsError::Empty("known scores"));
    }
    if unknown.is_empty() {
        return Err(MetricsError::Empty("unknown scores"));
    }
    check_finite(known)?;
    check_finite(unknown)?;
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, true))
        .chain(unknown.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (nk, nu) = (known.len() as f64, unknown.len() as f64);
    Ok((rank_sum - nk * (nk + 1.0) / 2.0) / (nk * nu))
}

/// A point of a threshold sweep. `rate` is the TPR for ROC curves and the
/// correct-classification rate for OSCR curves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub rate: f64,
}

/// One point per distinct score, `θ` descending. The last point accepts
/// everything (`fpr = 1`).
fn sweep(positives: &[(bool, f64)], negatives: &[f64]) -> Vec<CurvePoint> {
    let mut all: Vec<(f64, Option<bool>)> = positives
        .iter()
        .map(|&(hit, s)| (s, Some(hit)))
        .chain(negatives.iter().map(|&s| (s, None)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut points = Vec::new();
    let (mut hits, mut false_pos) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let theta = all[i].0;
        while i < all.len() && all[i].0 == theta {
            match all[i].1 {
                Some(true) => hits += 1,
                Some(false) => {}
                None => false_pos += 1,
            }
            i += 1;
        }
        points.push(CurvePoint {
            threshold: theta,
            fpr: false_pos as f64 / nn,
            rate: hits as f64 / np,
        });
    }
    points
}

fn trapezoid(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].rate + w[0].rate) / 2.0)
        .sum()
}

fn split_known(predictions: &[ScoredPrediction]) -> (Vec<(bool, f64)>, Vec<f64>) {
    let known = predictions
        .iter()
        .filter(|p| p.truth.is_some())
        .map(|p| (p.is_correct(), p.known_score))
        .collect();
    let unknown = predictions
        .iter()
        .filter(|p| p.truth.is_none())
        .map(|p| p.known_score)
        .collect();
    (known, unknown)
}

/// ROC curve of known (positive) versus unknown scores.
pub fn roc_curve(known: &[f64], unknown: &[f64]) -> Result<Vec<CurvePoint>, MetricsError> {
    if known.is_empty() || unknown.is_empty() {
        return Err(MetricsError::Empty("score population"));
    }
    check_finite(known)?;
    check_finite(unknown)?;
    let pos: Vec<(bool, f64)> = known.iter().map(|&s| (true, s)).collect();
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        rate: 0.0,
    }];
    points.extend(sweep(&pos, unknown));
    Ok(points)
}

/// Correct-classification rate of knowns against false-positive rate of
/// unknowns, swept over the known-score threshold. The curve starts at
/// `fpr = 0` with the rate of the strictest threshold.
pub fn oscr_curve(predictions: &[ScoredPrediction]) -> Result<Vec<CurvePoint>, MetricsError> {
    let (known, unknown) = split_known(predictions);
    if known.is_empty() {
        return Err(MetricsError::Empty("known-class predictions"));
    }
    if unknown.is_empty() {
        return Err(MetricsError::Empty("unknown-class predictions"));
    }
    let scores: Vec<f64> = known.iter().map(|k| k.1).chain(unknown.iter().copied()).collect();
    check_finite(&scores)?;
    let points = sweep(&known, &unknown);
    let first = points[0];
    let mut out = Vec::with_capacity(points.len() + 1);
    if first.fpr > 0.0 {
        out.push(CurvePoint { fpr: 0.0, ..first });
    }
    out.extend(points);
    Ok(out)
}

/// Area under the OSCR curve (trapezoidal rule).
pub fn oscr(predictions: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    Ok(trapezoid(&oscr_curve(predictions)?))
}

/// CSV with header `threshold,fpr,<rate_name>`.
pub fn curve_csv(points: &[CurvePoint], rate_name: &str) -> String {
    let mut out = format!("threshold,fpr,{rate_name}\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.rate));
    }
    out
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
