use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{selected_splits, train_trial, DataSource, TrainConfig, TrainError};
use crate::metrics::EvalReport;

/// Hyperparameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Threshold,
    Margin,
    Lambda,
    /// Descriptors per batch.
    Descriptors,
    /// Initial value of an adaptive scale.
    InitScale,
    /// Scale frozen at the given value.
    FixedScale,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "t" | "threshold" => SweepAxis::Threshold,
            "m" | "margin" => SweepAxis::Margin,
            "lambda" => SweepAxis::Lambda,
            "descriptors" => SweepAxis::Descriptors,
            "init-scale" => SweepAxis::InitScale,
            "fixed-scale" => SweepAxis::FixedScale,
            other => {
                return Err(format!(
                    "unknown sweep axis {other} (threshold, margin, lambda, descriptors, init-scale, fixed-scale)"
                ))
            }
        })
    }
}

impl SweepAxis {
    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &TrainConfig, value: f64) -> Result<TrainConfig, TrainError> {
        let mut out = cfg.clone();
        match self {
            SweepAxis::Threshold => out.threshold = value,
            SweepAxis::Margin => out.margin = value,
            SweepAxis::Lambda => out.lambda = value,
            SweepAxis::Descriptors => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(TrainError::Config(format!(
                        "descriptor count {value} is not a whole number"
                    )));
                }
                out.descriptors = Some(value as usize);
            }
            SweepAxis::InitScale => {
                out.init_scale = value;
                out.freeze_scale = false;
            }
            SweepAxis::FixedScale => {
                out.init_scale = value;
                out.freeze_scale = true;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// Mean metrics over the selected trials for one swept value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub acc: f64,
    pub auroc: f64,
    pub oscr: f64,
    pub reports: Vec<EvalReport>,
}

/// Final reports of every selected trial of every config, trained up to
/// `jobs` trials at a time. Results do not depend on `jobs`.
pub fn evaluate_configs(configs: &[TrainConfig], jobs: usize) -> Result<Vec<Vec<EvalReport>>, TrainError> {
    let sources = configs.iter().map(DataSource::load).collect::<Result<Vec<_>, _>>()?;
    let splits = configs
        .iter()
        .zip(&sources)
        .map(|(cfg, src)| selected_splits(cfg, src.num_classes()))
        .collect::<Result<Vec<_>, _>>()?;
    let tasks: Vec<(usize, usize)> = splits
        .iter()
        .enumerate()
        .flat_map(|(c, s)| (0..s.len()).map(move |k| (c, k)))
        .collect();
    let results: Mutex<Vec<Option<Result<EvalReport, TrainError>>>> =
        Mutex::new(std::iter::repeat_with(|| None).take(tasks.len()).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, k)) = tasks.get(i) else { break };
                let run = sources[c]
                    .trial_data(&splits[c][k])
                    .and_then(|data| train_trial(&configs[c], &data, &mut |_| {}))
                    .map(|t| t.record.report);
                results.lock().expect("lock")[i] = Some(run);
            });
        }
    });
    let mut reports = results
        .into_inner()
        .expect("lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter();
    Ok(splits
        .iter()
        .map(|s| reports.by_ref().take(s.len()).collect())
        .collect())
}

/// Trains every selected trial at every value, running up to `jobs` trials at once.
/// Rows come back in the order of `values`.
pub fn sweep(cfg: &TrainConfig, axis: SweepAxis, values: &[f64], jobs: usize) -> Result<Vec<SweepRow>, TrainError> {
    if values.is_empty() {
        return Err(TrainError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>, _>>()?;
    let groups = evaluate_configs(&configs, jobs)?;
    Ok(values
        .iter()
        .zip(groups)
        .map(|(&value, group)| {
            let mean = |f: fn(&EvalReport) -> f64| group.iter().map(f).sum::<f64>() / group.len() as f64;
            SweepRow {
                value,
                acc: mean(|r| r.acc_c),
                auroc: mean(|r| r.auroc_o),
                oscr: mean(|r| r.oscr_o),
                reports: group,
            }
        })
        .collect())
}

/// CSV with columns `value,acc,auroc,oscr`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,acc,auroc,oscr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.value, r.acc, r.auroc, r.oscr));
    }
    out
}
