use std::fs;

use rru_core::RruVariant;
use rru_harness::sweep::{read_summary, trial_dir, ABLATION_FILE, GRID_EPOCHS_FILE, GRID_LOSS_FILE, SWEEP_FILE};
use rru_harness::{
    build_model_config, run_ablation_suite, run_dropout_sweep, run_grid, run_trial, ExperimentConfig, GridAxes,
    GridMatrix, RunOptions, SweepOptions, TrialConfig, TrialData, TrialStatus,
};

fn tiny() -> TrialConfig {
    ExperimentConfig::from_json(
        r#"{
          "version": 1,
          "trial": {
            "dataset": { "kind": "adding", "length": 8, "train_size": 48, "valid_size": 16, "test_size": 16, "data_seed": 3 },
            "cell": { "kind": "rru", "middle_multiplier": 2.0, "relu_layers": 1, "output_size": 4, "variant": "standard" },
            "hidden_size": 4,
            "layers": 1,
            "learning_rate": 1e-2,
            "dropout_rate": 0.0,
            "batch_size": 16,
            "window": 8,
            "patience": 5,
            "seed": 11,
            "max_epochs": 2,
            "record_wall_time": false
          }
        }"#,
    )
    .unwrap()
    .trial
}

fn opts(dir: &std::path::Path) -> SweepOptions {
    SweepOptions {
        out_dir: dir.to_path_buf(),
        jobs: 1,
        progress: false,
    }
}

/// Parameter count of `tiny()` at state size `n`, so grid targets are exact.
fn count_at(n: usize) -> usize {
    let mut cfg = tiny();
    cfg.hidden_size = Some(n);
    let data = TrialData::load(&cfg).unwrap();
    build_model_config(&cfg, &data.shape()).unwrap().0.count_params()
}

#[test]
fn grid_writes_both_matrices_and_reruns_as_noop() {
    let dir = tempfile::tempdir().unwrap();
    let axes = GridAxes {
        learning_rates: vec![1e-3, 1e-2],
        param_targets: vec![count_at(3), count_at(6)],
    };
    let first = run_grid(&tiny(), &axes, &opts(dir.path())).unwrap();
    assert_eq!((first.sweep.trained, first.sweep.reused), (4, 0));
    let loss = GridMatrix::read(&dir.path().join(GRID_LOSS_FILE)).unwrap();
    let epochs = GridMatrix::read(&dir.path().join(GRID_EPOCHS_FILE)).unwrap();
    assert_eq!(loss.learning_rates, axes.learning_rates);
    assert_eq!(loss.param_targets, axes.param_targets);
    assert_eq!(loss.values, first.loss.values);
    assert_eq!(epochs.values, first.epochs.values);
    assert!(loss.values.iter().flatten().all(|v| v.is_finite()));
    assert_eq!(first.sweep.records[1].hidden_size, 6);

    let before = fs::read(dir.path().join(GRID_LOSS_FILE)).unwrap();
    let second = run_grid(&tiny(), &axes, &opts(dir.path())).unwrap();
    assert_eq!((second.sweep.trained, second.sweep.reused), (0, 4));
    assert_eq!(fs::read(dir.path().join(GRID_LOSS_FILE)).unwrap(), before);
}

#[test]
fn grid_cells_get_distinct_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let axes = GridAxes {
        learning_rates: vec![1e-2, 1e-2],
        param_targets: vec![count_at(3)],
    };
    let out = run_grid(&tiny(), &axes, &opts(dir.path())).unwrap();
    let seeds: Vec<u64> = out.sweep.records.iter().map(|r| r.config.seed).collect();
    assert_ne!(seeds[0], seeds[1]);
    assert_ne!(out.loss.values[0][0], out.loss.values[1][0]);
}

#[test]
fn unreachable_budget_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let axes = GridAxes {
        learning_rates: vec![1e-2],
        param_targets: vec![count_at(3), 5],
    };
    assert!(run_grid(&tiny(), &axes, &opts(dir.path())).is_err());
    assert!(!dir.path().join("trials").exists());
}

#[test]
fn nan_sentinel_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let m = GridMatrix {
        learning_rates: vec![1e-4, 10.0],
        param_targets: vec![100, 200],
        values: vec![vec![0.25, 1.5], vec![f64::NAN, 3.0]],
    };
    m.write(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().nth(2).unwrap(), "10,NaN,3");
    let back = GridMatrix::read(&path).unwrap();
    assert_eq!(back.learning_rates, m.learning_rates);
    assert!(back.values[1][0].is_nan());
    assert_eq!(back.values[0], m.values[0]);
}

#[test]
fn dropout_sweep_writes_one_row_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let rates = [0.0, 0.3, 0.6];
    let out = run_dropout_sweep(&tiny(), &rates, &opts(dir.path())).unwrap();
    let rows = read_summary(&dir.path().join(SWEEP_FILE)).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["0", "0.3", "0.6"]);
    assert!(out.records.iter().all(|r| r.config.seed == tiny().seed));
    for (row, record) in rows.iter().zip(&out.records) {
        assert_eq!(row.status, TrialStatus::Ok);
        assert_eq!(Some(row.best_valid), record.best_valid);
    }

    // rate 0 is the plain trial
    let plain = run_trial(&tiny(), &RunOptions::default()).unwrap();
    assert_eq!(plain.best_valid, out.records[0].best_valid);
    assert_eq!(plain.test_at_best, out.records[0].test_at_best);
}

#[test]
fn ablation_runs_every_variant_under_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ablation_suite(&tiny(), &opts(dir.path())).unwrap();
    let rows = read_summary(&dir.path().join(ABLATION_FILE)).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let expected: Vec<&str> = RruVariant::ALL.iter().map(|v| v.name()).collect();
    assert_eq!(names, expected);
    for (record, v) in out.records.iter().zip(RruVariant::ALL) {
        assert_eq!(record.config.variant(), Some(v));
        assert_eq!(record.config.seed, tiny().seed);
        assert!(trial_dir(dir.path(), &record.config).join("trial.json").exists());
    }
}

#[test]
fn ablation_rejects_baseline_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.cell = rru_harness::CellSpec::Gru;
    assert!(run_ablation_suite(&cfg, &opts(dir.path())).is_err());
}

#[test]
fn changed_config_is_not_reused() {
    let dir = tempfile::tempdir().unwrap();
    let rates = [0.1];
    run_dropout_sweep(&tiny(), &rates, &opts(dir.path())).unwrap();
    let mut longer = tiny();
    longer.max_epochs = 3;
    let out = run_dropout_sweep(&longer, &rates, &opts(dir.path())).unwrap();
    assert_eq!(out.trained, 1);
    assert_eq!(out.records[0].epochs.len(), 3);
}
