//! Batch-size sweep comparing W-RankSim and RankSim.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::train::{train_from_config, LossKind, RegularizerKind, TrainConfig};
use crate::data::Splits;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunKey {
    pub regularizer: RegularizerKind,
    pub batch_size: usize,
    pub seed: u64,
}

impl std::fmt::Display for RunKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "regularizer={} batch_size={} seed={}",
            self.regularizer, self.batch_size, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Shared settings; `regularizer`, `batch_size` and `seed` are overridden
    /// per run.
    pub base: TrainConfig,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub regularizers: Vec<RegularizerKind>,
    /// Test hook: this run fails with a numerical error instead of training.
    pub fault_injection: Option<RunKey>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig {
                loss: LossKind::Lmcl,
                ..TrainConfig::default()
            },
            batch_sizes: vec![2, 4, 8, 16, 32],
            seeds: (0..5).collect(),
            regularizers: vec![RegularizerKind::WRanksim, RegularizerKind::Ranksim],
            fault_injection: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.batch_sizes.len() < 2 {
            return Err(Error::validation(
                "batch_sizes",
                "at least 2 batch sizes required",
            ));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::validation(
                "batch_sizes",
                "batch sizes must be positive",
            ));
        }
        if self.seeds.len() < 3 {
            return Err(Error::validation("seeds", "at least 3 seeds required"));
        }
        if self.regularizers.is_empty() {
            return Err(Error::validation(
                "regularizers",
                "at least one regularizer required",
            ));
        }
        Ok(())
    }

    /// Every run in deterministic (regularizer, batch size, seed) order.
    pub fn grid(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &regularizer in &self.regularizers {
            for &batch_size in &self.batch_sizes {
                for &seed in &self.seeds {
                    keys.push(RunKey {
                        regularizer,
                        batch_size,
                        seed,
                    });
                }
            }
        }
        keys
    }

    pub fn run_config(&self, key: &RunKey) -> TrainConfig {
        TrainConfig {
            regularizer: key.regularizer,
            batch_size: key.batch_size,
            seed: key.seed,
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: RunKey,
    pub config_hash: String,
    pub loss: LossKind,
    pub best_epoch: Option<usize>,
    /// Test-split metrics of the selected model.
    pub test: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub regularizer: RegularizerKind,
    pub batch_size: usize,
    pub runs: usize,
    pub failures: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_mae: f64,
    pub mean_tail_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSummary {
    pub regularizer: RegularizerKind,
    /// Standard deviation of the per-batch-size mean test accuracies.
    pub cross_batch_std: f64,
    pub cross_batch_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub dispersion: Vec<RegularizerSummary>,
}

impl SweepReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.error.is_some())
    }

    pub fn dispersion_of(&self, reg: RegularizerKind) -> Option<&RegularizerSummary> {
        self.dispersion.iter().find(|d| d.regularizer == reg)
    }

    /// One CSV row per run.
    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "config_hash",
            "seed",
            "batch_size",
            "regularizer",
            "loss",
            "status",
            "best_epoch",
            "accuracy",
            "macro_f1",
            "mae",
            "tail_recall",
            "error",
        ])
        .map_err(csv_err)?;
        for r in &self.runs {
            let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let t = r.test.as_ref();
            w.write_record([
                r.config_hash.clone(),
                r.key.seed.to_string(),
                r.key.batch_size.to_string(),
                r.key.regularizer.to_string(),
                r.loss.to_string(),
                if r.error.is_some() { "failed" } else { "ok" }.to_string(),
                r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                num(t.map(|m| m.accuracy)),
                num(t.map(|m| m.macro_f1)),
                num(t.map(|m| m.mae)),
                num(t.and_then(|m| m.tail_recall())),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))
    }

    /// Aggregates without per-run detail, as pretty JSON.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            runs: usize,
            failures: usize,
            cells: &'a [CellSummary],
            dispersion: &'a [RegularizerSummary],
        }
        serde_json::to_string_pretty(&Summary {
            runs: self.runs.len(),
            failures: self.failures().count(),
            cells: &self.cells,
            dispersion: &self.dispersion,
        })
        .map_err(|e| Error::Serde(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n − 1); 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs);
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

fn run_one(cfg: &SweepConfig, key: RunKey, splits: &Splits) -> RunRecord {
    let run_cfg = cfg.run_config(&key);
    let result = if cfg.fault_injection == Some(key) {
        Err(Error::Numerical {
            step: "before training".into(),
            reason: "injected fault".into(),
        })
    } else {
        train_from_config(splits, &run_cfg)
    };
    let (best_epoch, test, error) = match result {
        Ok(o) => (Some(o.best_epoch), Some(o.test), None),
        Err(e) => {
            log::warn!("run {key} failed: {e}");
            (None, None, Some(format!("run {key}: {e}")))
        }
    };
    RunRecord {
        key,
        config_hash: run_cfg.config_hash(),
        loss: run_cfg.loss,
        best_epoch,
        test,
        error,
    }
}

/// Aggregates run records into per-cell and per-regularizer summaries.
pub fn summarize(cfg: &SweepConfig, runs: Vec<RunRecord>) -> SweepReport {
    let mut cells = Vec::new();
    let mut dispersion = Vec::new();
    for &reg in &cfg.regularizers {
        let mut means = Vec::new();
        for &bs in &cfg.batch_sizes {
            let here: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.key.regularizer == reg && r.key.batch_size == bs)
                .collect();
            let ok: Vec<&MetricsReport> = here.iter().filter_map(|r| r.test.as_ref()).collect();
            let acc: Vec<f64> = ok.iter().map(|m| m.accuracy).collect();
            let mae: Vec<f64> = ok.iter().map(|m| m.mae).collect();
            let tail: Vec<f64> = ok.iter().filter_map(|m| m.tail_recall()).collect();
            let cell = CellSummary {
                regularizer: reg,
                batch_size: bs,
                runs: here.len(),
                failures: here.len() - ok.len(),
                mean_accuracy: mean(&acc),
                std_accuracy: sample_std(&acc),
                mean_mae: mean(&mae),
                mean_tail_recall: mean(&tail),
            };
            if !acc.is_empty() {
                means.push(cell.mean_accuracy);
            }
            cells.push(cell);
        }
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        dispersion.push(RegularizerSummary {
            regularizer: reg,
            cross_batch_std: sample_std(&means),
            cross_batch_range: if means.is_empty() { f64::NAN } else { hi - lo },
        });
    }
    SweepReport {
        runs,
        cells,
        dispersion,
    }
}

/// Trains one model per grid point, `jobs` at a time (0 = all cores).
///
/// Failed runs are recorded in the report rather than aborting the grid.
pub fn sweep_batch_size(cfg: &SweepConfig, splits: &Splits, jobs: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let grid = cfg.grid();
    let runs: Vec<RunRecord> =
        pool.install(|| grid.par_iter().map(|&k| run_one(cfg, k, splits)).collect());
    Ok(summarize(cfg, runs))
}
