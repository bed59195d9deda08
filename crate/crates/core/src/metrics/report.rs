use serde::{Deserialize, Serialize};

use super::{mean_std, MetricsError};

/// How OSCR is discretized; written into every report.
pub const OSCR_CONVENTION: &str = "accept score >= threshold at every distinct score; \
     trapezoidal area from fpr=0 (ccr of the strictest threshold) to fpr=1";

/// Metrics of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trial: usize,
    pub acc_c: f64,
    pub auroc_o: f64,
    pub oscr_o: f64,
    pub n_known: usize,
    pub n_unknown: usize,
    /// Digest of the run configuration with the trial selector removed.
    pub config_digest: String,
    #[serde(default)]
    pub label: String,
    #[serde(default = "default_true")]
    pub enable_mlas: bool,
    #[serde(default = "default_true")]
    pub enable_oss: bool,
    #[serde(default)]
    pub scoring: String,
    /// Which checkpoint was evaluated.
    #[serde(default)]
    pub checkpoint: String,
    #[serde(default)]
    pub oscr_convention: String,
}

fn default_true() -> bool {
    true
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation of each metric across trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub config_digest: String,
    pub acc_c: MetricSummary,
    pub auroc_o: MetricSummary,
    pub oscr_o: MetricSummary,
}

pub fn aggregate_trials(reports: &[EvalReport]) -> Result<TrialSummary, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty("report list"))?;
    if let Some(other) = reports.iter().find(|r| r.config_digest != first.config_digest) {
        return Err(MetricsError::MixedConfigs(
            first.config_digest.clone(),
            other.config_digest.clone(),
        ));
    }
    let summarize = |f: fn(&EvalReport) -> f64| {
        let (mean, std) = mean_std(&reports.iter().map(f).collect::<Vec<_>>());
        MetricSummary { mean, std }
    };
    Ok(TrialSummary {
        trials: reports.len(),
        config_digest: first.config_digest.clone(),
        acc_c: summarize(|r| r.acc_c),
        auroc_o: summarize(|r| r.auroc_o),
        oscr_o: summarize(|r| r.oscr_o),
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Per-trial rows plus a mean row for each configuration, in percent.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# OSCR: {OSCR_CONVENTION}\n"));
    out.push_str(&format!(
        "{:<24} {:>5} {:>7} {:>9} {:>8}\n",
        "method", "trial", "Acc_c%", "AUROC_o%", "OSCR_o%"
    ));
    let mut digests: Vec<&str> = Vec::new();
    for r in reports {
        if !digests.contains(&r.config_digest.as_str()) {
            digests.push(&r.config_digest);
        }
    }
    for d in digests {
        let group: Vec<EvalReport> = reports.iter().filter(|r| r.config_digest == d).cloned().collect();
        let name = if group[0].label.is_empty() {
            &d[..d.len().min(12)]
        } else {
            group[0].label.as_str()
        };
        for r in &group {
            out.push_str(&format!(
                "{:<24} {:>5} {:>7} {:>9} {:>8}\n",
                name,
                r.trial,
                pct(r.acc_c),
                pct(r.auroc_o),
                pct(r.oscr_o)
            ));
        }
        if let Ok(s) = aggregate_trials(&group) {
            out.push_str(&format!(
                "{:<24} {:>5} {:>7} {:>9} {:>8}\n",
                name,
                "mean",
                pct(s.acc_c.mean),
                pct(s.auroc_o.mean),
                pct(s.oscr_o.mean)
            ));
        }
    }
    out
}

/// One mean row per (margin term, open-space term) toggle combination.
pub fn render_ablation_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:>4} {:>4} {:>7} {:>9} {:>8} {:>7}\n",
        "MLAS", "OSS", "Acc_c%", "AUROC_o%", "OSCR_o%", "trials"
    );
    for (mlas, oss) in [(false, false), (true, false), (false, true), (true, true)] {
        let group: Vec<&EvalReport> = reports
            .iter()
            .filter(|r| r.enable_mlas == mlas && r.enable_oss == oss)
            .collect();
        if group.is_empty() {
            continue;
        }
        let mean = |f: fn(&EvalReport) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64;
        let mark = |b: bool| if b { "x" } else { "" };
        out.push_str(&format!(
            "{:>4} {:>4} {:>7} {:>9} {:>8} {:>7}\n",
            mark(mlas),
            mark(oss),
            pct(mean(|r| r.acc_c)),
            pct(mean(|r| r.auroc_o)),
            pct(mean(|r| r.oscr_o)),
            group.len()
        ));
    }
    out
}
