//! `omcl` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::autodiff::AutodiffError;
use crate::data::{load_dataset, make_splits, SplitFile};
use crate::metrics::{curve_csv, oscr_curve, render_ablation_table, render_table, roc_curve, EvalReport, MetricsError};
use crate::model::{
    check_loss_gradients, random_loss_cases, Architecture, Checkpoint, DescriptorMode, ModelError, ScoringMode,
    LOSS_CHECK_STEP,
};
use crate::trainer::{
    export_embeddings, report_from_predictions, run_trials, scored_predictions, selected_splits, sha256_hex, sweep,
    sweep_csv, DataSource, SweepAxis, TrainConfig, TrainError, SYNTHETIC_DATASET,
};

#[derive(Debug, Parser)]
#[command(
    name = "omcl",
    version,
    about = "Open-set recognition with the open margin cosine loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw known/unknown class partitions and write a split file.
    Split(SplitArgs),
    /// Train the selected trials.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its trial.
    Eval(CheckpointArgs),
    /// Train and evaluate over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Write test-set embeddings of a checkpoint as CSV.
    ExportEmbeddings(ExportArgs),
    /// Compare analytic and finite-difference gradients of every loss term.
    Gradcheck(GradcheckArgs),
    /// Render stored evaluation reports as tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackboneKind {
    Mlp,
    SmallCnn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    CubeProject,
    SphereUniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoringArg {
    ThresholdChannel,
    Plain,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// NPY directory, `.npz` archive, or `synthetic`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    split_file: Option<PathBuf>,
    /// Number of trials when drawing splits.
    #[arg(long)]
    trials: Option<usize>,
    /// Trial index, or `all`.
    #[arg(long)]
    trial: Option<String>,
    #[arg(long)]
    known_classes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pinned: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    backbone: Option<BackboneKind>,
    /// Hidden widths of the mlp backbone.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Channels of the two small-cnn conv layers.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    channels: Option<Vec<usize>>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    freeze_scale: Option<bool>,
    #[arg(long)]
    scale_lr_factor: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    margin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Descriptors per batch.
    #[arg(long)]
    descriptors: Option<usize>,
    #[arg(long, value_enum)]
    descriptor_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    scoring: Option<ScoringArg>,
    #[arg(long)]
    enable_mlas: Option<bool>,
    #[arg(long)]
    enable_oss: Option<bool>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_batch: Option<usize>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Dataset to count classes from, and the name recorded in the file.
    #[arg(long, default_value = SYNTHETIC_DATASET)]
    dataset: String,
    /// Class count; read from the dataset when absent.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 2023)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    pinned: Vec<usize>,
    #[arg(long)]
    known_classes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// threshold, margin, lambda, descriptors, init-scale or fixed-scale.
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    values: Vec<f64>,
    /// Trials trained at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    inner: CheckpointArgs,
    /// Samples per class.
    #[arg(long, default_value_t = 200)]
    cap: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random head configurations to check.
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 2023)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report JSON files, or directories searched for `report.json`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Add the loss-toggle table.
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let m = e.to_string();
        match e {
            ModelError::InvalidConfig(_) | ModelError::InputShape { .. } => CliError::Usage(m),
            ModelError::NonFiniteLoss { .. } | ModelError::DegenerateInput { .. } => CliError::Numerical(m),
            ModelError::Autodiff(AutodiffError::NonFinite { .. }) => CliError::Numerical(m),
            ModelError::Autodiff(_) => CliError::Usage(m),
            ModelError::Io(_) | ModelError::BadMagic | ModelError::UnsupportedVersion(_) | ModelError::Corrupt(_) => {
                CliError::Data(m)
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Data(d) => CliError::Data(d.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Metrics(MetricsError::NonFinite(v)) => CliError::Numerical(format!("score {v} is not finite")),
            TrainError::Metrics(m) => CliError::Data(m.to_string()),
            e @ TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_digest: Option<&'a str>,
    files: Vec<ManifestEntry>,
}

/// Artifact directory that records every file it writes.
struct OutDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.files.push(ManifestEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn finish(self, command: &str, digest: Option<&str>) -> Result<(), CliError> {
        let manifest = Manifest {
            command,
            config_digest: digest,
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializes");
    s.push('\n');
    s
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    s
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let base = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        self.apply(base)
    }

    fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig, CliError> {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(
            dataset,
            trials,
            embed_dim,
            batch_size,
            epochs,
            lr,
            init_scale,
            freeze_scale,
            scale_lr_factor
        );
        set!(
            margin,
            threshold,
            lambda,
            enable_mlas,
            enable_oss,
            augment,
            seed,
            eval_batch,
            pinned
        );
        if let Some(p) = &self.split_file {
            cfg.split_file = Some(p.clone());
        }
        if let Some(k) = self.known_classes {
            cfg.known_classes = Some(k);
        }
        if let Some(m) = self.descriptors {
            cfg.descriptors = Some(m);
        }
        if let Some(t) = &self.trial {
            cfg.trial = match t.as_str() {
                "all" => None,
                k => Some(
                    k.parse()
                        .map_err(|_| CliError::Usage(format!("--trial expects a number or `all`, got {k}")))?,
                ),
            };
        }
        let hidden = self.hidden.clone();
        match (self.backbone, &cfg.backbone) {
            (Some(BackboneKind::Mlp), _) => {
                cfg.backbone = Architecture::Mlp {
                    hidden: hidden.unwrap_or_default(),
                }
            }
            (Some(BackboneKind::SmallCnn), _) => cfg.backbone = Architecture::small_cnn(),
            (None, Architecture::Mlp { .. }) if hidden.is_some() => {
                cfg.backbone = Architecture::Mlp {
                    hidden: hidden.unwrap_or_default(),
                }
            }
            _ => {}
        }
        if let Some(ch) = &self.channels {
            match (ch.as_slice(), &mut cfg.backbone) {
                ([a, b], Architecture::SmallCnn { channels }) => *channels = [*a, *b],
                _ => {
                    return Err(CliError::Usage(
                        "--channels takes two values and needs the small-cnn backbone".into(),
                    ))
                }
            }
        }
        if let Some(m) = self.descriptor_mode {
            cfg.descriptor_mode = match m {
                ModeArg::CubeProject => DescriptorMode::CubeProject,
                ModeArg::SphereUniform => DescriptorMode::SphereUniform,
            };
        }
        if let Some(s) = self.scoring {
            cfg.scoring = match s {
                ScoringArg::ThresholdChannel => ScoringMode::ThresholdChannel,
                ScoringArg::Plain => ScoringMode::Plain,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_digest(cfg: &TrainConfig) {
    println!("config digest: {}", cfg.digest());
}

fn cmd_split(a: &SplitArgs) -> Result<(), CliError> {
    let classes = match a.classes {
        Some(c) => c,
        None if a.dataset == SYNTHETIC_DATASET => crate::data::synthetic::GaussianMixture::default().classes,
        None => {
            let (train, test) = load_dataset(Path::new(&a.dataset)).map_err(|e| CliError::Data(e.to_string()))?;
            train.num_classes().max(test.num_classes())
        }
    };
    let splits =
        make_splits(classes, a.k, a.seed, &a.pinned, a.known_classes).map_err(|e| CliError::Usage(e.to_string()))?;
    let file = SplitFile::new(&a.dataset, &splits);
    let text = file.to_json();
    let digest = sha256_hex(text.as_bytes());
    println!("config digest: {digest}");
    for t in &file.trials {
        println!("trial {}: known {:?} unknown {:?}", t.k, t.known, t.unknown);
    }
    let mut out = OutDir::create(&a.out)?;
    out.write("splits.json", text.as_bytes())?;
    out.finish("split", Some(&digest))
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    print_digest(&cfg);
    let digest = cfg.digest();
    let mut log = String::new();
    let trained = run_trials(&cfg, &mut |e| {
        let line = json_line(e);
        print!("{line}");
        let _ = std::io::stdout().flush();
        log.push_str(&line);
    })?;
    let mut out = OutDir::create(&a.out)?;
    out.write("config.toml", cfg.to_toml().as_bytes())?;
    out.write("log.jsonl", log.as_bytes())?;
    for t in &trained {
        let k = t.record.trial;
        let mut ckpt = Vec::new();
        t.checkpoint.write_to(&mut ckpt)?;
        out.write(&format!("trial{k}/checkpoint.omcl"), &ckpt)?;
        out.write(&format!("trial{k}/report.json"), t.record.report.to_json().as_bytes())?;
        out.write(&format!("trial{k}/record.json"), pretty_json(&t.record).as_bytes())?;
        if let Some(stats) = &t.checkpoint.stats {
            out.write(&format!("trial{k}/stats.json"), pretty_json(stats).as_bytes())?;
        }
        let r = &t.record.report;
        println!(
            "trial {k}: acc_c {:.4} auroc_o {:.4} oscr_o {:.4} scale {:.4} ({:.1}s)",
            r.acc_c,
            r.auroc_o,
            r.oscr_o,
            t.record.scale_trace.last().copied().unwrap_or(f64::NAN),
            t.record.wall_seconds
        );
    }
    out.finish("train", Some(&digest))
}

/// Checkpoint, the configuration it was trained with (plus overrides) and its trial.
fn load_checkpoint(a: &CheckpointArgs) -> Result<(Checkpoint, TrainConfig), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let stored = ckpt.metadata.get("config").cloned();
    let base = match (&a.config.config, stored) {
        (Some(path), _) => TrainConfig::load(path)?,
        (None, Some(v)) => {
            serde_json::from_value(v).map_err(|e| CliError::Data(format!("checkpoint config is unreadable: {e}")))?
        }
        (None, None) => TrainConfig::default(),
    };
    let mut cfg = a.config.apply(base)?;
    if a.config.trial.is_none() {
        cfg.trial = ckpt.metadata.get("trial").and_then(|t| t.as_u64()).map(|t| t as usize);
    }
    if cfg.trial.is_none() {
        return Err(CliError::Usage("the checkpoint names no trial; pass --trial".into()));
    }
    Ok((ckpt, cfg))
}

fn trial_view(cfg: &TrainConfig) -> Result<crate::data::TrialData, CliError> {
    let source = DataSource::load(cfg)?;
    let split = selected_splits(cfg, source.num_classes())?.remove(0);
    Ok(source.trial_data(&split)?)
}

fn cmd_eval(a: &CheckpointArgs) -> Result<(), CliError> {
    let (ckpt, cfg) = load_checkpoint(a)?;
    print_digest(&cfg);
    let data = trial_view(&cfg)?;
    let preds = scored_predictions(&ckpt.model, &data, cfg.scoring, cfg.eval_batch)?;
    let report = report_from_predictions(&preds, data.split.trial, &cfg)?;
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
    let roc = roc_curve(&known, &unknown).map_err(TrainError::from)?;
    let oscr = oscr_curve(&preds).map_err(TrainError::from)?;
    println!(
        "trial {}: acc_c {:.4} auroc_o {:.4} oscr_o {:.4}",
        report.trial, report.acc_c, report.auroc_o, report.oscr_o
    );
    let mut out = OutDir::create(&a.out)?;
    out.write("report.json", report.to_json().as_bytes())?;
    out.write("roc.csv", curve_csv(&roc, "tpr").as_bytes())?;
    out.write("oscr.csv", curve_csv(&oscr, "ccr").as_bytes())?;
    out.finish("eval", Some(&cfg.digest()))
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    let axis: SweepAxis = a.axis.parse().map_err(CliError::Usage)?;
    print_digest(&cfg);
    let rows = sweep(&cfg, axis, &a.values, a.jobs)?;
    let csv = sweep_csv(&rows);
    print!("{csv}");
    let mut out = OutDir::create(&a.out)?;
    out.write("sweep.csv", csv.as_bytes())?;
    out.write("sweep.json", pretty_json(&rows).as_bytes())?;
    out.finish("sweep", Some(&cfg.digest()))
}

fn cmd_export(a: &ExportArgs) -> Result<(), CliError> {
    let (ckpt, cfg) = load_checkpoint(&a.inner)?;
    print_digest(&cfg);
    let data = trial_view(&cfg)?;
    let csv = export_embeddings(&ckpt.model, &data, a.cap, cfg.eval_batch)?;
    println!(
        "{} embeddings of dimension {}",
        csv.lines().count() - 1,
        ckpt.model.head.embed_dim()
    );
    let mut out = OutDir::create(&a.inner.out)?;
    out.write("embeddings.csv", csv.as_bytes())?;
    out.finish("export-embeddings", Some(&cfg.digest()))
}

#[derive(Serialize)]
struct GradcheckSummary {
    cases: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
    max_rel_error: Vec<(String, f64)>,
    passed: bool,
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let request = format!("gradcheck cases={} seed={} tolerance={}", a.cases, a.seed, a.tolerance);
    let digest = sha256_hex(request.as_bytes());
    println!("config digest: {digest}");
    let mut worst: Vec<(String, f64)> = Vec::new();
    for case in random_loss_cases(a.cases, a.seed) {
        let checks = check_loss_gradients(&case, LOSS_CHECK_STEP, a.tolerance)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        for c in checks {
            match worst.iter_mut().find(|w| w.0 == c.term) {
                Some(w) => w.1 = w.1.max(c.max_rel_error),
                None => worst.push((c.term.to_string(), c.max_rel_error)),
            }
        }
    }
    for (term, err) in &worst {
        println!("{term:<5} max relative error {err:.3e}");
    }
    let passed = worst.iter().all(|w| w.1 < a.tolerance);
    if let Some(dir) = &a.out {
        let summary = GradcheckSummary {
            cases: a.cases,
            seed: a.seed,
            step: LOSS_CHECK_STEP,
            tolerance: a.tolerance,
            max_rel_error: worst.clone(),
            passed,
        };
        let mut out = OutDir::create(dir)?;
        out.write("gradcheck.json", pretty_json(&summary).as_bytes())?;
        out.finish("gradcheck", Some(&digest))?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check exceeded tolerance {}",
            a.tolerance
        )))
    }
}

fn collect_reports(path: &Path, into: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if path.is_file() {
        into.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| io_error(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_reports(&p, into)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            into.push(p);
        }
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let mut paths = Vec::new();
    for p in &a.inputs {
        collect_reports(p, &mut paths)?;
    }
    if paths.is_empty() {
        return Err(CliError::Data("no report.json files found".into()));
    }
    let reports = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str::<EvalReport>(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = render_table(&reports);
    if a.ablation {
        text.push('\n');
        text.push_str(&render_ablation_table(&reports));
    }
    let mut digests: Vec<&str> = reports.iter().map(|r| r.config_digest.as_str()).collect();
    digests.dedup();
    let digest = sha256_hex(digests.join(",").as_bytes());
    println!("config digest: {digest}");
    print!("{text}");
    if let Some(dir) = &a.out {
        let mut out = OutDir::create(dir)?;
        out.write("table.txt", text.as_bytes())?;
        out.finish("report", Some(&digest))?;
    }
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            if e.code() == 1 {
                eprintln!("run `omcl --help` for usage");
            }
            e.code()
        }
    }
}
