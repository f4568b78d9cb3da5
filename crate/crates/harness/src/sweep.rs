//! Grids, dropout sweeps and ablation suites.
//!
//! Every trial lives in `<out>/trials/<config hash>/`. A trial whose
//! `trial.json` already holds the same config is read back instead of being
//! rerun, so an interrupted sweep resumes and a finished one is a no-op.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use rru_core::rng::derive_seed;
use rru_core::RruVariant;

use crate::config::{GridAxes, TrialConfig};
use crate::dataset::TrialData;
use crate::error::{HarnessError, Result};
use crate::solve::build_model_config;
use crate::trial::{csv_error, run_trial_with_data, RunOptions, TrialRecord, TrialStatus, TRIAL_FILE};

pub const GRID_LOSS_FILE: &str = "grid_loss.csv";
pub const GRID_EPOCHS_FILE: &str = "grid_epochs.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    /// Trials run concurrently.
    pub jobs: usize,
    pub progress: bool,
}

/// Records in input order, and how many needed training.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub records: Vec<TrialRecord>,
    pub trained: usize,
    pub reused: usize,
}

pub fn trial_dir(out_dir: &Path, cfg: &TrialConfig) -> PathBuf {
    out_dir.join("trials").join(&cfg.hash()[..16])
}

fn cached(dir: &Path, cfg: &TrialConfig) -> Option<TrialRecord> {
    let record = TrialRecord::load(&dir.join(TRIAL_FILE)).ok()?;
    (record.config == *cfg).then_some(record)
}

/// Runs (or reads back) every config. Sizes are solved first, so a bad
/// parameter budget fails the sweep before any training.
pub fn run_trials(configs: &[TrialConfig], opts: &SweepOptions) -> Result<SweepOutcome> {
    if configs.is_empty() {
        return Ok(SweepOutcome {
            records: Vec::new(),
            trained: 0,
            reused: 0,
        });
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let pending: Vec<usize> = (0..configs.len())
        .filter(|&i| cached(&trial_dir(&opts.out_dir, &configs[i]), &configs[i]).is_none())
        .collect();
    let mut data: Vec<TrialData> = Vec::new();
    for &i in &pending {
        if !data.iter().any(|d| d.fits(&configs[i])) {
            data.push(TrialData::load(&configs[i])?);
        }
    }
    for &i in &pending {
        let d = data.iter().find(|d| d.fits(&configs[i])).expect("loaded above");
        build_model_config(&configs[i], &d.shape())?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let fresh: Vec<(usize, TrialRecord)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let cfg = &configs[i];
                let d = data.iter().find(|d| d.fits(cfg)).expect("loaded above");
                let run = RunOptions {
                    out_dir: Some(trial_dir(&opts.out_dir, cfg)),
                    progress: false,
                };
                let record = run_trial_with_data(cfg, d, &run)?;
                if opts.progress {
                    eprintln!(
                        "trial {} lr {:e} dropout {} -> {:?} best {:?}",
                        &record.config_hash[..8],
                        cfg.learning_rate,
                        cfg.dropout_rate,
                        record.status,
                        record.best_valid
                    );
                }
                Ok((i, record))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let trained = fresh.len();
    let mut slots: Vec<Option<TrialRecord>> = vec![None; configs.len()];
    for (i, r) in fresh {
        slots[i] = Some(r);
    }
    let records = slots
        .into_iter()
        .zip(configs)
        .map(|(slot, cfg)| match slot {
            Some(r) => Ok(r),
            None => cached(&trial_dir(&opts.out_dir, cfg), cfg)
                .ok_or_else(|| HarnessError::Data(format!("trial record for {} vanished", &cfg.hash()[..16]))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutcome {
        reused: configs.len() - trained,
        trained,
        records,
    })
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => v.to_string(),
        _ => "NaN".into(),
    }
}

/// Learning rate × parameter target matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMatrix {
    pub learning_rates: Vec<f64>,
    pub param_targets: Vec<usize>,
    /// `values[i][j]` for learning rate `i` and target `j`; NaN marks a failed trial.
    pub values: Vec<Vec<f64>>,
}

impl GridMatrix {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let header =
            std::iter::once("learning_rate".to_string()).chain(self.param_targets.iter().map(|t| t.to_string()));
        w.write_record(header).map_err(|e| csv_error(path, e))?;
        for (lr, row) in self.learning_rates.iter().zip(&self.values) {
            let cells = std::iter::once(lr.to_string()).chain(row.iter().map(|&v| fmt_value(Some(v))));
            w.write_record(cells).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| HarnessError::Data(format!("{}: bad {what}", path.display()));
        let param_targets = r
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .skip(1)
            .map(|h| h.parse().map_err(|_| bad("header")))
            .collect::<Result<Vec<usize>>>()?;
        let mut learning_rates = Vec::new();
        let mut values = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| csv_error(path, e))?;
            let mut cells = row.iter().map(|c| c.parse::<f64>().map_err(|_| bad("cell")));
            learning_rates.push(cells.next().ok_or_else(|| bad("row"))??);
            values.push(cells.collect::<Result<Vec<f64>>>()?);
        }
        Ok(Self {
            learning_rates,
            param_targets,
            values,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub loss: GridMatrix,
    pub epochs: GridMatrix,
    pub sweep: SweepOutcome,
}

/// Full learning-rate × parameter-budget product. Cell `(i, j)` runs with
/// seed `derive_seed(base.seed, [i, j])`.
pub fn run_grid(base: &TrialConfig, axes: &GridAxes, opts: &SweepOptions) -> Result<GridOutcome> {
    if axes.learning_rates.is_empty() || axes.param_targets.is_empty() {
        return Err(HarnessError::Config("grid axes must be non-empty".into()));
    }
    let mut configs = Vec::new();
    for (i, &lr) in axes.learning_rates.iter().enumerate() {
        for (j, &target) in axes.param_targets.iter().enumerate() {
            let mut cfg = base.clone();
            cfg.learning_rate = lr;
            cfg.set_target_params(target);
            cfg.seed = derive_seed(base.seed, &[i as u64, j as u64]);
            configs.push(cfg);
        }
    }
    let sweep = run_trials(&configs, opts)?;
    let cols = axes.param_targets.len();
    let matrix = |f: &dyn Fn(&TrialRecord) -> Option<f64>| GridMatrix {
        learning_rates: axes.learning_rates.clone(),
        param_targets: axes.param_targets.clone(),
        values: sweep
            .records
            .chunks(cols)
            .map(|row| {
                row.iter()
                    .map(|r| if r.failed() { f64::NAN } else { f(r).unwrap_or(f64::NAN) })
                    .collect()
            })
            .collect(),
    };
    let loss = matrix(&|r| r.best_valid);
    let epochs = matrix(&|r| r.epochs_to_best.map(|e| e as f64));
    loss.write(&opts.out_dir.join(GRID_LOSS_FILE))?;
    epochs.write(&opts.out_dir.join(GRID_EPOCHS_FILE))?;
    Ok(GridOutcome { loss, epochs, sweep })
}

/// One row of `sweep.csv` / `ablation.csv`; failed trials read as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub status: TrialStatus,
    pub best_epoch: f64,
    pub best_valid: f64,
    pub test_at_best: f64,
}

impl SummaryRow {
    fn new(label: String, r: &TrialRecord) -> Self {
        let ok = |v: Option<f64>| if r.failed() { f64::NAN } else { v.unwrap_or(f64::NAN) };
        Self {
            label,
            status: r.status,
            best_epoch: ok(r.best_epoch.map(|e| e as f64)),
            best_valid: ok(r.best_valid),
            test_at_best: ok(r.test_at_best),
        }
    }
}

const SUMMARY_COLUMNS: [&str; 4] = ["status", "best_epoch", "best_valid", "test_at_best"];

fn status_name(s: TrialStatus) -> &'static str {
    match s {
        TrialStatus::Ok => "ok",
        TrialStatus::FailedNonfinite => "failed_nonfinite",
    }
}

/// Writes rows under a header whose first column is `label_column`.
pub fn write_summary(path: &Path, label_column: &str, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = std::iter::once(label_column).chain(SUMMARY_COLUMNS);
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let best_epoch = if row.best_epoch.is_finite() {
            row.best_epoch.to_string()
        } else {
            "NaN".into()
        };
        let record = [
            row.label.clone(),
            status_name(row.status).into(),
            best_epoch,
            fmt_value(Some(row.best_valid)),
            fmt_value(Some(row.test_at_best)),
        ];
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let bad = || HarnessError::Data(format!("{}: malformed summary row", path.display()));
    r.records()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            let cell = |i: usize| row.get(i).ok_or_else(bad);
            let num = |i: usize| cell(i)?.parse::<f64>().map_err(|_| bad());
            let status = match cell(1)? {
                "ok" => TrialStatus::Ok,
                "failed_nonfinite" => TrialStatus::FailedNonfinite,
                _ => return Err(bad()),
            };
            Ok(SummaryRow {
                label: cell(0)?.to_string(),
                status,
                best_epoch: num(2)?,
                best_valid: num(3)?,
                test_at_best: num(4)?,
            })
        })
        .collect()
}

/// One trial per dropout rate, all with the base seed.
pub fn run_dropout_sweep(base: &TrialConfig, rates: &[f64], opts: &SweepOptions) -> Result<SweepOutcome> {
    if rates.is_empty() {
        return Err(HarnessError::Config("no dropout rates".into()));
    }
    let configs: Vec<TrialConfig> = rates
        .iter()
        .map(|&rate| {
            let mut cfg = base.clone();
            cfg.dropout_rate = rate;
            cfg
        })
        .collect();
    let out = run_trials(&configs, opts)?;
    let rows: Vec<SummaryRow> = rates
        .iter()
        .zip(&out.records)
        .map(|(rate, r)| SummaryRow::new(rate.to_string(), r))
        .collect();
    write_summary(&opts.out_dir.join(SWEEP_FILE), "dropout", &rows)?;
    Ok(out)
}

/// The standard RRU and its five variants under one seed and budget.
pub fn run_ablation_suite(base: &TrialConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    if base.variant().is_none() {
        return Err(HarnessError::Config("ablation needs the RRU cell".into()));
    }
    let configs = RruVariant::ALL
        .into_iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set_variant(v)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = run_trials(&configs, opts)?;
    let rows: Vec<SummaryRow> = RruVariant::ALL
        .iter()
        .zip(&out.records)
        .map(|(v, r)| SummaryRow::new(v.name().to_string(), r))
        .collect();
    write_summary(&opts.out_dir.join(ABLATION_FILE), "variant", &rows)?;
    Ok(out)
}
