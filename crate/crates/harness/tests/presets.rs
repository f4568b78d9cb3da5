use rru_harness::config::PRESETS;
use rru_harness::ExperimentConfig;

#[test]
fn every_preset_parses_validates_and_round_trips() {
    for (name, _) in PRESETS {
        let exp = ExperimentConfig::preset(name).unwrap();
        exp.trial.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        let back = ExperimentConfig::from_json(&exp.to_json()).unwrap();
        assert_eq!(back, exp, "{name}");
        assert_eq!(back.trial.hash(), exp.trial.hash());
    }
}

#[test]
fn nottingham_grid_keeps_the_listed_learning_rates() {
    let grid = ExperimentConfig::preset("grid_nottingham").unwrap().grid.unwrap();
    assert_eq!(
        grid.learning_rates,
        [1e-4, 2e-4, 3e-4, 5e-4, 8e-4, 13e-4, 22e-4, 36e-4, 6e-3, 1e-2]
    );
    assert_eq!(grid.param_targets.len(), 10);
    assert_eq!(grid.param_targets[0], 1_000_000);
    assert_eq!(grid.param_targets[9], 15_000_000);
}

#[test]
fn dropout_presets_sweep_ten_rates() {
    for name in ["dropout_nottingham", "dropout_char_ptb"] {
        let rates = ExperimentConfig::preset(name).unwrap().dropout_rates.unwrap();
        assert_eq!(rates.len(), 10, "{name}");
        for (i, r) in rates.iter().enumerate() {
            assert!((r - i as f64 / 10.0).abs() < 1e-12, "{name}: {r}");
        }
    }
}

#[test]
fn unknown_fields_and_versions_are_rejected() {
    let mut json: serde_json::Value =
        serde_json::from_str(&ExperimentConfig::preset("adding").unwrap().to_json()).unwrap();
    json["trial"]["lerning_rate"] = 0.1.into();
    assert!(ExperimentConfig::from_json(&json.to_string()).is_err());

    let mut json: serde_json::Value =
        serde_json::from_str(&ExperimentConfig::preset("adding").unwrap().to_json()).unwrap();
    json["version"] = 2.into();
    assert!(ExperimentConfig::from_json(&json.to_string()).is_err());
}
