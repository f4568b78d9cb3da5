//! One training run: RAdam with global-norm clipping, early stopping on the
//! validation loss, and a test evaluation of the best checkpoint.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use rru_core::metrics::MeanAccumulator;
use rru_core::rng::derive_seed;
use rru_core::{
    checkpoint, clip_global_norm, CellState, EarlyStopper, EvalSums, Model, RAdam, RAdamConfig, Rng, StopMode,
};

use crate::config::TrialConfig;
use crate::dataset::{Metric, Split, TrialData};
use crate::error::{HarnessError, Result};
use crate::solve::build_model_config;

pub const TRIAL_FILE: &str = "trial.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

const SEED_INIT: u64 = 0;
const SEED_ORDER: u64 = 1;
const SEED_NOISE: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    FailedNonfinite,
}

/// Losses are in the dataset's reporting unit (see [`Metric`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: f64,
    pub valid: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: TrialConfig,
    pub config_hash: String,
    pub status: TrialStatus,
    pub metric: Metric,
    pub hidden_size: usize,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    /// 0 when the record holds metrics of the untrained model.
    pub best_epoch: Option<usize>,
    pub best_valid: Option<f64>,
    pub test_at_best: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub epochs_to_best: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TrialRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
    }

    pub fn failed(&self) -> bool {
        self.status != TrialStatus::Ok
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Receives `trial.json`, `epochs.csv` and `best.ckpt`.
    pub out_dir: Option<PathBuf>,
    /// Per-epoch lines on stderr.
    pub progress: bool,
}

#[derive(Serialize, Deserialize)]
struct EpochRow {
    epoch: usize,
    train: f64,
    valid: f64,
    seconds: f64,
}

pub fn write_epochs_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for e in epochs {
        w.serialize(EpochRow {
            epoch: e.epoch,
            train: e.train,
            valid: e.valid,
            seconds: e.seconds,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// `(epoch, train, valid, seconds)` rows.
pub fn read_epochs_csv(path: &Path) -> Result<Vec<(usize, f64, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<EpochRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            Ok((row.epoch, row.train, row.valid, row.seconds))
        })
        .collect()
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

/// Loss (in `metric` units) and accuracy over a whole split, in evaluation mode.
/// Stateful data carries the state from window to window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

pub fn evaluate(model: &Model<f32>, data: &TrialData, split: Split, metric: Metric) -> Result<Evaluation> {
    let stateful = data.shape().stateful;
    let mut sums = EvalSums::default();
    let mut carry: Option<Vec<CellState<f32>>> = None;
    for plan in data.plan(split, None) {
        let batch = data.batch(split, &plan)?;
        let (s, states) = model.evaluate(&batch, carry.as_deref())?;
        sums.merge(s);
        if stateful {
            carry = Some(states);
        }
    }
    let loss = metric.from_loss(sums.loss.mean());
    if !loss.is_finite() {
        return Err(rru_core::Error::NonFinite {
            location: format!("{split:?} loss"),
        }
        .into());
    }
    let accuracy = (sums.accuracy.count > 0.0).then(|| sums.accuracy.mean());
    Ok(Evaluation { loss, accuracy })
}

fn non_finite(e: &HarnessError) -> Option<String> {
    match e {
        HarnessError::Core(rru_core::Error::NonFinite { location }) => Some(format!("non-finite value at {location}")),
        _ => None,
    }
}

/// Mean training loss of one epoch, or the location of a non-finite value.
fn train_epoch(
    model: &mut Model<f32>,
    opt: &mut RAdam<f32>,
    cfg: &TrialConfig,
    data: &TrialData,
    order: &mut Rng,
    noise: &mut Rng,
) -> Result<f64> {
    let stateful = data.shape().stateful;
    let mut plan = data.plan(Split::Train, Some(order));
    if let Some(cap) = cfg.max_steps_per_epoch {
        plan.truncate(cap);
    }
    let mut loss = MeanAccumulator::default();
    let mut carry: Option<Vec<CellState<f32>>> = None;
    for p in &plan {
        let batch = data.batch(Split::Train, p)?;
        model.store.zero_grad();
        let out = model.train_step(&batch, noise, carry.as_deref())?;
        clip_global_norm(&mut model.store, cfg.clip_norm);
        opt.step(&mut model.store)?;
        loss.add(out.loss);
        if stateful {
            carry = Some(out.final_states);
        }
    }
    Ok(loss.mean())
}

pub fn run_trial(cfg: &TrialConfig, opts: &RunOptions) -> Result<TrialRecord> {
    cfg.validate()?;
    let data = TrialData::load(cfg)?;
    run_trial_with_data(cfg, &data, opts)
}

/// Runs `cfg` on already loaded data (which must [`fit`](TrialData::fits) it).
pub fn run_trial_with_data(cfg: &TrialConfig, data: &TrialData, opts: &RunOptions) -> Result<TrialRecord> {
    cfg.validate()?;
    if !data.fits(cfg) {
        return Err(HarnessError::Config(
            "loaded data does not match the trial's dataset settings".into(),
        ));
    }
    let shape = data.shape();
    let metric = shape.metric;
    let (model_cfg, hidden_size) = build_model_config(cfg, &shape)?;
    let mut model = Model::<f32>::init(model_cfg, &mut Rng::new(derive_seed(cfg.seed, &[SEED_INIT])))?;
    let mut order = Rng::new(derive_seed(cfg.seed, &[SEED_ORDER]));
    let mut noise = Rng::new(derive_seed(cfg.seed, &[SEED_NOISE]));
    let mut opt = RAdam::new(RAdamConfig::new(cfg.learning_rate), &model.store)?;
    let mut stopper = EarlyStopper::new(cfg.patience, StopMode::Min);
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let ckpt_path = opts.out_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE));

    let mut record = TrialRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        status: TrialStatus::Ok,
        metric,
        hidden_size,
        num_params: model.num_params(),
        epochs: Vec::new(),
        best_epoch: None,
        best_valid: None,
        test_at_best: None,
        test_accuracy: None,
        epochs_to_best: None,
        failure: None,
    };

    let mut best_store = None;
    let mut failure = None;
    if cfg.max_epochs == 0 {
        match evaluate(&model, data, Split::Valid, metric) {
            Ok(v) => {
                record.best_epoch = Some(0);
                record.best_valid = Some(v.loss);
                best_store = Some(model.store.clone());
            }
            Err(e) => failure = Some(non_finite(&e).ok_or(e)?),
        }
    }
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let step = train_epoch(&mut model, &mut opt, cfg, data, &mut order, &mut noise)
            .and_then(|train| Ok((train, evaluate(&model, data, Split::Valid, metric)?)));
        let (train, valid) = match step {
            Ok(r) => r,
            Err(e) => {
                failure = Some(non_finite(&e).ok_or(e)?);
                break;
            }
        };
        let train = metric.from_loss(train);
        if !train.is_finite() {
            failure = Some("non-finite training loss".into());
            break;
        }
        record.epochs.push(EpochRecord {
            epoch,
            train,
            valid: valid.loss,
            seconds: if cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            valid_accuracy: valid.accuracy,
        });
        if stopper.observe(epoch, valid.loss) {
            record.best_epoch = Some(epoch);
            record.best_valid = Some(valid.loss);
            match &ckpt_path {
                Some(path) => checkpoint::save(&model.store, path)?,
                None => best_store = Some(model.store.clone()),
            }
        }
        if let Some(dir) = &opts.out_dir {
            write_epochs_csv(&dir.join(EPOCHS_FILE), &record.epochs)?;
        }
        if opts.progress {
            eprintln!(
                "epoch {epoch:>3}  train {train:.4}  valid {:.4}  best {:.4}@{}  {:.1}s",
                valid.loss,
                stopper.best().unwrap_or(f64::NAN),
                stopper.best_epoch(),
                start.elapsed().as_secs_f64()
            );
        }
        if stopper.should_stop(epoch) {
            break;
        }
    }

    if let Some(reason) = failure {
        record.status = TrialStatus::FailedNonfinite;
        record.failure = Some(reason);
        record.best_epoch = None;
        record.best_valid = None;
    } else if record.best_epoch.is_some() {
        match (best_store, &ckpt_path) {
            (Some(store), _) => model.store = store,
            (None, Some(path)) => checkpoint::load_into(&mut model.store, path)?,
            (None, None) => unreachable!("best parameters are kept in memory without an output directory"),
        }
        let test = evaluate(&model, data, Split::Test, metric)?;
        record.test_at_best = Some(test.loss);
        record.test_accuracy = test.accuracy;
        record.epochs_to_best = record.best_epoch;
    }

    if let Some(dir) = &opts.out_dir {
        write_epochs_csv(&dir.join(EPOCHS_FILE), &record.epochs)?;
        record.save(&dir.join(TRIAL_FILE))?;
    }
    Ok(record)
}

/// Validation and test metrics of saved parameters.
pub fn evaluate_checkpoint(cfg: &TrialConfig, ckpt: &Path) -> Result<(Evaluation, Evaluation)> {
    cfg.validate()?;
    let data = TrialData::load(cfg)?;
    let shape = data.shape();
    let (model_cfg, _) = build_model_config(cfg, &shape)?;
    let mut model = Model::<f32>::init(model_cfg, &mut Rng::new(0))?;
    checkpoint::load_into(&mut model.store, ckpt).map_err(HarnessError::data)?;
    Ok((
        evaluate(&model, &data, Split::Valid, shape.metric)?,
        evaluate(&model, &data, Split::Test, shape.metric)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetSpec, ExperimentConfig};

    fn tiny() -> TrialConfig {
        let mut cfg = ExperimentConfig::preset("adding").unwrap().trial;
        cfg.dataset = DatasetSpec::Adding {
            length: 8,
            train_size: 64,
            valid_size: 32,
            test_size: 32,
            data_seed: 0,
        };
        cfg.hidden_size = Some(8);
        cfg.max_epochs = 3;
        cfg.record_wall_time = false;
        cfg
    }

    #[test]
    fn zero_epochs_evaluates_the_initial_model() {
        let mut cfg = tiny();
        cfg.max_epochs = 0;
        let r = run_trial(&cfg, &RunOptions::default()).unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(r.status, TrialStatus::Ok);
        assert_eq!((r.best_epoch, r.epochs_to_best), (Some(0), Some(0)));
        assert!(r.best_valid.unwrap() > 0.0 && r.test_at_best.unwrap() > 0.0);
    }

    #[test]
    fn same_seed_same_record() {
        let a = run_trial(&tiny(), &RunOptions::default()).unwrap();
        let b = run_trial(&tiny(), &RunOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epochs.len(), 3);
        let mut other = tiny();
        other.seed = 1;
        assert_ne!(run_trial(&other, &RunOptions::default()).unwrap().epochs, a.epochs);
    }

    #[test]
    fn best_checkpoint_gives_the_test_metric() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            progress: false,
        };
        let r = run_trial(&tiny(), &opts).unwrap();
        let (valid, test) = evaluate_checkpoint(&r.config, &dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(Some(valid.loss), r.best_valid);
        assert_eq!(Some(test.loss), r.test_at_best);
        assert_eq!(TrialRecord::load(&dir.path().join(TRIAL_FILE)).unwrap(), r);
        let rows = read_epochs_csv(&dir.path().join(EPOCHS_FILE)).unwrap();
        let expect: Vec<_> = r
            .epochs
            .iter()
            .map(|e| (e.epoch, e.train, e.valid, e.seconds))
            .collect();
        assert_eq!(rows, expect);
        // same answer with the best parameters kept in memory
        assert_eq!(run_trial(&tiny(), &RunOptions::default()).unwrap(), r);
    }

    #[test]
    fn best_valid_is_the_minimum() {
        let mut cfg = tiny();
        cfg.max_epochs = 6;
        cfg.learning_rate = 3e-2;
        let r = run_trial(&cfg, &RunOptions::default()).unwrap();
        let min = r.epochs.iter().map(|e| e.valid).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_valid, Some(min));
        let best = r.epochs.iter().find(|e| e.valid == min).unwrap().epoch;
        assert_eq!(r.best_epoch, Some(best));
    }

    #[test]
    fn patience_stops_training() {
        let mut cfg = tiny();
        cfg.max_epochs = 50;
        cfg.patience = 0;
        cfg.learning_rate = 0.5;
        let r = run_trial(&cfg, &RunOptions::default()).unwrap();
        if let Some(best) = r.best_epoch {
            assert!(r.epochs.len() <= best + 1);
        }
        assert!(r.epochs.len() < 50);
    }
}
