//! Command-line front end: data generation, training, evaluation, gradient
//! checks, the batch-size sweep and result reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate, load_csv, split_indices, Dataset, DatasetManifest, SplitIndices, Splits, SynthConfig,
};
use crate::error::{Error, Result};
use crate::experiment::{
    derive_seed, evaluate, sweep_batch_size, train_from_config, EpochRecord, MetricsReport,
    SweepConfig, TrainConfig,
};
use crate::gradcheck::{run_all, GradCheckConfig};
use crate::model::Mlp;
use crate::numeric::seeded_rng;
use crate::regularizer::OrdinalClassSet;

#[derive(Debug, Parser)]
#[command(
    name = "wranksim",
    version,
    about = "Ordinal classification with W-RankSim regularization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic imbalanced ordinal dataset.
    GenData(GenDataArgs),
    /// Train a classifier and save the dev-selected checkpoint.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Run the finite-difference and rank-oracle suites.
    GradCheck(GradCheckArgs),
    /// Batch-size sweep comparing W-RankSim and RankSim.
    Sweep(SweepArgs),
    /// Print a summary of a run, evaluation, sweep or grad-check directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// TOML synthetic data config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ordered class labels, e.g. `1,2,3,4,5`. Read from a sibling
    /// `dataset.json` when omitted, else 1..5.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `split.json` from a training run; evaluates each split separately.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV; default synthetic data is generated from `--seed` when
    /// omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for data generation and the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parallel runs; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of another command.
    pub dir: PathBuf,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

/// Record of inputs and artifacts written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub dataset: Option<serde_json::Value>,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Class labels and the partition used by a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub classes: Vec<i64>,
    pub indices: SplitIndices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub best_epoch: usize,
    pub train: MetricsReport,
    pub dev: MetricsReport,
    pub test: MetricsReport,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical { .. } => 3,
        _ => 2,
    }
}

/// Parses arguments, runs the command and maps the result to an exit code.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Parses a TOML config, reporting the offending key on failure.
pub fn parse_config<T: DeserializeOwned>(text: &str, source: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().trim().to_string();
        let field = quoted_after(&msg, "unknown field `")
            .or_else(|| e.span().and_then(|s| key_at(text, s.start)))
            .unwrap_or_else(|| source.to_string());
        Error::Validation {
            field,
            reason: format!("{source}: {msg}"),
        }
    })
}

fn quoted_after(msg: &str, prefix: &str) -> Option<String> {
    let rest = &msg[msg.find(prefix)? + prefix.len()..];
    Some(rest[..rest.find('`')?].to_string())
}

/// Key assigned on the line containing byte `offset`.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let end = text[offset..].find('\n').map_or(text.len(), |i| offset + i);
    let line = text[start..end].trim();
    if let Some((key, _)) = line.split_once('=') {
        Some(key.trim().trim_matches('"').to_string())
    } else if line.starts_with('[') {
        Some(
            line.trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string(),
        )
    } else {
        None
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text, &p.display().to_string())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Serde(e.to_string()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Output directory with the files written so far.
struct OutDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl OutDir {
    /// Creates `root`, refusing to touch a non-empty directory without
    /// `force`.
    fn prepare(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            let non_empty = std::fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .next()
                .is_some();
            if non_empty && !force {
                return Err(Error::validation(
                    "out",
                    format!("{} is not empty; pass --force to overwrite", root.display()),
                ));
            }
            if non_empty {
                std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
            }
        }
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(path)
    }

    fn finish(
        self,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        dataset: Option<serde_json::Value>,
        started: Instant,
    ) -> Result<()> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            dataset,
            artifacts: self.artifacts,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, to_json(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

fn json_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Class set from a `--classes` flag, a sibling `dataset.json`, or 1..5.
fn resolve_classes(flag: Option<&str>, data: &Path) -> Result<OrdinalClassSet> {
    if let Some(list) = flag {
        let labels = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::validation("classes", format!("`{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        return OrdinalClassSet::new(labels);
    }
    let sibling = data.with_file_name("dataset.json");
    if sibling.is_file() {
        let manifest: DatasetManifest = read_json(&sibling)?;
        return OrdinalClassSet::new(manifest.classes);
    }
    Ok(OrdinalClassSet::default())
}

fn dataset_record(data: &Dataset) -> serde_json::Value {
    serde_json::json!({
        "provenance": data.provenance,
        "n_samples": data.len(),
        "feature_dim": data.feature_dim(),
        "classes": data.classes.labels(),
    })
}

pub fn write_history_csv(history: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<Outcome> {
    let started = Instant::now();
    let cfg: SynthConfig = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let mut out = OutDir::prepare(&a.out, a.force)?;
    let data = generate(&cfg, a.seed, &mut seeded_rng(a.seed))?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    out.write("data.csv", &csv)?;
    out.write(
        "dataset.json",
        to_json(&DatasetManifest::for_dataset(&data, &csv))?.as_bytes(),
    )?;
    println!(
        "wrote {} samples ({} features) to {}; class counts {:?}",
        data.len(),
        data.feature_dim(),
        a.out.join("data.csv").display(),
        data.class_counts()
    );
    out.finish(
        "gen-data",
        Some(a.seed),
        json_value(&cfg),
        Some(dataset_record(&data)),
        started,
    )?;
    Ok(Outcome::Success)
}

fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    let started = Instant::now();
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let classes = resolve_classes(a.classes.as_deref(), &a.data)?;
    let data = load_csv(&a.data, &classes)?;
    let mut out = OutDir::prepare(&a.out, a.force)?;
    let indices = split_indices(
        &data,
        cfg.split,
        &mut seeded_rng(derive_seed(cfg.seed, "split")),
    )?;
    let splits = Splits::from_indices(&data, &indices)?;
    let outcome = train_from_config(&splits, &cfg)?;

    out.write(
        "checkpoint.json",
        outcome.model.to_checkpoint_string()?.as_bytes(),
    )?;
    out.write("history.csv", &write_history_csv(&outcome.history)?)?;
    let metrics = TrainMetrics {
        best_epoch: outcome.best_epoch,
        train: outcome.train,
        dev: outcome.dev,
        test: outcome.test,
    };
    out.write("metrics.json", to_json(&metrics)?.as_bytes())?;
    let split_file = SplitFile {
        classes: classes.labels().to_vec(),
        indices,
    };
    out.write("split.json", to_json(&split_file)?.as_bytes())?;
    println!(
        "best epoch {}: test accuracy {:.4}, macro-F1 {:.4}, MAE {:.4}",
        metrics.best_epoch, metrics.test.accuracy, metrics.test.macro_f1, metrics.test.mae
    );
    out.finish(
        "train",
        Some(cfg.seed),
        json_value(&cfg),
        Some(dataset_record(&data)),
        started,
    )?;
    Ok(Outcome::Success)
}

fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let started = Instant::now();
    let model = Mlp::load(&a.checkpoint)?;
    let split_file: Option<SplitFile> = a.splits.as_deref().map(read_json).transpose()?;
    let classes = match (&split_file, a.classes.as_deref()) {
        (_, Some(flag)) => resolve_classes(Some(flag), &a.data)?,
        (Some(s), None) => OrdinalClassSet::new(s.classes.clone())?,
        (None, None) => resolve_classes(None, &a.data)?,
    };
    let data = load_csv(&a.data, &classes)?;
    let mut out = OutDir::prepare(&a.out, a.force)?;
    let mut reports = serde_json::Map::new();
    match &split_file {
        Some(s) => {
            let splits = Splits::from_indices(&data, &s.indices)?;
            for (name, part) in [
                ("train", &splits.train),
                ("dev", &splits.dev),
                ("test", &splits.test),
            ] {
                reports.insert(name.into(), json_value(&evaluate(&model, part)?));
            }
        }
        None => {
            reports.insert("all".into(), json_value(&evaluate(&model, &data)?));
        }
    }
    for (name, r) in &reports {
        println!(
            "{name}: accuracy {:.4}, MAE {:.4}",
            r["accuracy"].as_f64().unwrap_or(f64::NAN),
            r["mae"].as_f64().unwrap_or(f64::NAN)
        );
    }
    out.write("metrics.json", to_json(&reports)?.as_bytes())?;
    let config = serde_json::json!({
        "checkpoint": a.checkpoint,
        "splits": a.splits,
        "classes": classes.labels(),
    });
    out.finish("eval", None, config, Some(dataset_record(&data)), started)?;
    Ok(Outcome::Success)
}

fn cmd_grad_check(a: &GradCheckArgs) -> Result<Outcome> {
    let started = Instant::now();
    let mut cfg: GradCheckConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let mut out = a
        .out
        .as_deref()
        .map(|p| OutDir::prepare(p, a.force))
        .transpose()?;
    let report = run_all(&cfg)?;
    print!("{}", report.render());
    for s in report.suites.iter().filter(|s| !s.passed) {
        eprintln!(
            "FAILED {}: max relative error {:.3e} exceeds {:.0e}; replay case: {}",
            s.name,
            s.max_error,
            s.tolerance,
            s.failing_case
                .as_ref()
                .map(|c| c.to_string())
                .unwrap_or_default()
        );
    }
    if let Some(out) = out.as_mut() {
        out.write("report.json", to_json(&report)?.as_bytes())?;
    }
    if let Some(out) = out {
        out.finish(
            "grad-check",
            Some(cfg.seed),
            json_value(&cfg),
            None,
            started,
        )?;
    }
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}

fn cmd_sweep(a: &SweepArgs) -> Result<Outcome> {
    let started = Instant::now();
    let cfg: SweepConfig = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let data = match &a.data {
        Some(path) => load_csv(path, &resolve_classes(a.classes.as_deref(), path)?)?,
        None => generate(&SynthConfig::default(), a.seed, &mut seeded_rng(a.seed))?,
    };
    let mut out = OutDir::prepare(&a.out, a.force)?;
    let indices = split_indices(
        &data,
        cfg.base.split,
        &mut seeded_rng(derive_seed(a.seed, "split")),
    )?;
    let splits = Splits::from_indices(&data, &indices)?;
    let report = sweep_batch_size(&cfg, &splits, a.jobs)?;

    let mut csv = Vec::new();
    report.write_runs_csv(&mut csv)?;
    out.write("runs.csv", &csv)?;
    let mut summary = report.summary_json()?;
    summary.push('\n');
    out.write("summary.json", summary.as_bytes())?;
    for d in &report.dispersion {
        println!(
            "{}: cross-batch std of mean test accuracy {:.5} (range {:.5})",
            d.regularizer, d.cross_batch_std, d.cross_batch_range
        );
    }
    let failed = report.failures().count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} runs failed; see runs.csv",
            report.runs.len()
        );
        for r in report.failures() {
            eprintln!("warning: {}", r.error.as_deref().unwrap_or_default());
        }
    }
    out.finish(
        "sweep",
        Some(a.seed),
        json_value(&cfg),
        Some(dataset_record(&data)),
        started,
    )?;
    Ok(Outcome::Success)
}

fn fmt_num(v: &serde_json::Value) -> String {
    v.as_f64()
        .map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn cmd_report(a: &ReportArgs) -> Result<Outcome> {
    let dir = &a.dir;
    let summary = dir.join("summary.json");
    let metrics = dir.join("metrics.json");
    let grad = dir.join("report.json");
    if summary.is_file() {
        let v: serde_json::Value = read_json(&summary)?;
        println!("{} runs, {} failed", v["runs"], v["failures"]);
        println!(
            "{:<10} {:>6} {:>10} {:>10} {:>10} {:>10}",
            "reg", "batch", "acc_mean", "acc_std", "mae", "tail_rec"
        );
        for c in v["cells"].as_array().into_iter().flatten() {
            println!(
                "{:<10} {:>6} {:>10} {:>10} {:>10} {:>10}",
                c["regularizer"].as_str().unwrap_or("?"),
                c["batch_size"],
                fmt_num(&c["mean_accuracy"]),
                fmt_num(&c["std_accuracy"]),
                fmt_num(&c["mean_mae"]),
                fmt_num(&c["mean_tail_recall"])
            );
        }
        for d in v["dispersion"].as_array().into_iter().flatten() {
            println!(
                "{}: cross-batch std {}",
                d["regularizer"].as_str().unwrap_or("?"),
                fmt_num(&d["cross_batch_std"])
            );
        }
    } else if metrics.is_file() {
        let v: serde_json::Value = read_json(&metrics)?;
        if let Some(e) = v.get("best_epoch") {
            println!("best epoch {e}");
        }
        for name in ["train", "dev", "test", "all"] {
            if let Some(m) = v.get(name) {
                println!(
                    "{name:<6} accuracy {} macro_f1 {} mae {}",
                    fmt_num(&m["accuracy"]),
                    fmt_num(&m["macro_f1"]),
                    fmt_num(&m["mae"])
                );
            }
        }
    } else if grad.is_file() {
        let r: crate::gradcheck::GradCheckReport = read_json(&grad)?;
        print!("{}", r.render());
    } else {
        return Err(Error::validation(
            "dir",
            format!(
                "{} holds no summary.json, metrics.json or report.json",
                dir.display()
            ),
        ));
    }
    Ok(Outcome::Success)
}
