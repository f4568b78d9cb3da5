//! Trial and experiment configuration files.
//!
//! An experiment file is one JSON document:
//!
//! ```json
//! { "version": 1, "trial": { ... }, "grid": { ... }, "dropout_rates": [ ... ] }
//! ```
//!
//! `grid` and `dropout_rates` are read only by the sweep subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rru_core::{BaselineConfig, BaselineKind, CellConfig, RruConfig, RruVariant};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Where a text corpus comes from: one file split 90/5/5, or three files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TextSource {
    Corpus {
        corpus: PathBuf,
    },
    Splits {
        train: PathBuf,
        valid: PathBuf,
        test: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Piano-roll JSON with "train", "valid", "test" splits.
    Music {
        path: PathBuf,
    },
    Char {
        source: TextSource,
    },
    Word {
        source: TextSource,
        vocab_size: usize,
    },
    Mnist {
        dir: PathBuf,
        permuted: bool,
        perm_seed: u64,
    },
    Adding {
        length: usize,
        train_size: usize,
        valid_size: usize,
        test_size: usize,
        data_seed: u64,
    },
    Copy {
        prefix: usize,
        delay: usize,
        alphabet: usize,
        train_size: usize,
        valid_size: usize,
        test_size: usize,
        data_seed: u64,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Music { .. } => "music",
            DatasetSpec::Char { .. } => "char",
            DatasetSpec::Word { .. } => "word",
            DatasetSpec::Mnist { .. } => "mnist",
            DatasetSpec::Adding { .. } => "adding",
            DatasetSpec::Copy { .. } => "copy",
        }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, DatasetSpec::Char { .. } | DatasetSpec::Word { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Rru,
    Gru,
    Lstm,
    Mogrifier,
}

impl std::str::FromStr for CellKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rru" => Ok(CellKind::Rru),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            "mogrifier" => Ok(CellKind::Mogrifier),
            _ => Err(HarnessError::Config(format!("unknown cell {s:?}"))),
        }
    }
}

/// Cell family and its size-independent settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CellSpec {
    Rru {
        middle_multiplier: f64,
        relu_layers: usize,
        output_size: usize,
        #[serde(default)]
        variant: RruVariant,
    },
    Gru,
    Lstm {
        forget_bias: f64,
    },
    Mogrifier {
        forget_bias: f64,
        rounds: usize,
        rank: usize,
    },
}

impl CellSpec {
    /// Defaults used when switching cell family from the command line.
    pub fn default_for(kind: CellKind) -> Self {
        match kind {
            CellKind::Rru => CellSpec::Rru {
                middle_multiplier: 2.0,
                relu_layers: 1,
                output_size: 64,
                variant: RruVariant::Standard,
            },
            CellKind::Gru => CellSpec::Gru,
            CellKind::Lstm => CellSpec::Lstm { forget_bias: 1.0 },
            CellKind::Mogrifier => CellSpec::Mogrifier {
                forget_bias: 1.0,
                rounds: 5,
                rank: 40,
            },
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellSpec::Rru { .. } => CellKind::Rru,
            CellSpec::Gru => CellKind::Gru,
            CellSpec::Lstm { .. } => CellKind::Lstm,
            CellSpec::Mogrifier { .. } => CellKind::Mogrifier,
        }
    }

    /// One layer with state size `n` reading `input_size` features.
    pub fn layer(&self, input_size: usize, n: usize, dropout_rate: f64) -> CellConfig {
        let baseline = |kind, forget_bias, mog_rounds, mog_rank| {
            CellConfig::Baseline(BaselineConfig {
                kind,
                input_size,
                state_size: n,
                forget_bias,
                mog_rounds,
                mog_rank,
                recurrent_dropout_rate: dropout_rate,
            })
        };
        match *self {
            CellSpec::Rru {
                middle_multiplier,
                relu_layers,
                output_size,
                variant,
            } => CellConfig::Rru(RruConfig {
                input_size,
                state_size: n,
                output_size,
                middle_multiplier,
                relu_layers,
                dropout_rate,
                variant,
            }),
            CellSpec::Gru => baseline(BaselineKind::Gru, 0.0, 0, 1),
            CellSpec::Lstm { forget_bias } => baseline(BaselineKind::Lstm, forget_bias, 0, 1),
            CellSpec::Mogrifier {
                forget_bias,
                rounds,
                rank,
            } => baseline(BaselineKind::MogrifierLstm, forget_bias, rounds, rank),
        }
    }
}

fn default_embedding_size() -> usize {
    16
}

fn default_clip_norm() -> f64 {
    1.0
}

fn default_zero_state_prob() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// Everything one training run needs. Exactly one of `hidden_size` and
/// `target_params` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub dataset: DatasetSpec,
    pub cell: CellSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_params: Option<usize>,
    pub layers: usize,
    /// Token datasets only.
    #[serde(default = "default_embedding_size")]
    pub embedding_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// Sequences per batch; parallel lanes for stateful text.
    pub batch_size: usize,
    /// Text window length, or the music trim length.
    pub window: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_epochs: usize,
    /// Caps the training batches of each epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps_per_epoch: Option<usize>,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    /// Per-lane zero-state reset probability for stateful text.
    #[serde(default = "default_zero_state_prob")]
    pub zero_state_prob: f64,
    /// When false the seconds column is written as 0 so reruns are byte-identical.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        match (self.hidden_size, self.target_params) {
            (Some(_), Some(_)) | (None, None) => {
                return bad("set exactly one of hidden_size and target_params".into());
            }
            (Some(0), _) => return bad("hidden_size must be positive".into()),
            _ => {}
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(0.0..=1.0).contains(&self.zero_state_prob) {
            return bad(format!("zero_state_prob {} outside [0, 1]", self.zero_state_prob));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.layers == 0 || self.batch_size == 0 || self.embedding_size == 0 {
            return bad("layers, batch_size and embedding_size must be positive".into());
        }
        if self.max_steps_per_epoch == Some(0) {
            return bad("max_steps_per_epoch must be positive".into());
        }
        if self.window < 2 && (self.dataset.is_text() || matches!(self.dataset, DatasetSpec::Music { .. })) {
            return bad(format!("window {} too short", self.window));
        }
        if let CellSpec::Rru { output_size: 0, .. } = self.cell {
            return bad("RRU output_size must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn variant(&self) -> Option<RruVariant> {
        match self.cell {
            CellSpec::Rru { variant, .. } => Some(variant),
            _ => None,
        }
    }

    pub fn set_variant(&mut self, v: RruVariant) -> Result<()> {
        match &mut self.cell {
            CellSpec::Rru { variant, .. } => {
                *variant = v;
                Ok(())
            }
            _ => Err(HarnessError::Config("variants apply only to the RRU cell".into())),
        }
    }

    /// Switches to a parameter budget, dropping any explicit size.
    pub fn set_target_params(&mut self, target: usize) {
        self.target_params = Some(target);
        self.hidden_size = None;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub learning_rates: Vec<f64>,
    pub param_targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub trial: TrialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rates: Option<Vec<f64>>,
}

/// 0.0, 0.1, ..., 0.9.
pub fn default_dropout_rates() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

/// Shipped configurations, by file stem.
pub const PRESETS: &[(&str, &str)] = &[
    ("adding", include_str!("../../../configs/adding.json")),
    ("copy", include_str!("../../../configs/copy.json")),
    ("jsb", include_str!("../../../configs/jsb.json")),
    ("sotu_char", include_str!("../../../configs/sotu_char.json")),
    ("char_ptb", include_str!("../../../configs/char_ptb.json")),
    ("word_ptb", include_str!("../../../configs/word_ptb.json")),
    ("mnist", include_str!("../../../configs/mnist.json")),
    ("pmnist", include_str!("../../../configs/pmnist.json")),
    ("grid_adding", include_str!("../../../configs/grid_adding.json")),
    ("grid_nottingham", include_str!("../../../configs/grid_nottingham.json")),
    ("grid_word_ptb", include_str!("../../../configs/grid_word_ptb.json")),
    (
        "dropout_nottingham",
        include_str!("../../../configs/dropout_nottingham.json"),
    ),
    (
        "dropout_char_ptb",
        include_str!("../../../configs/dropout_char_ptb.json"),
    ),
];

impl ExperimentConfig {
    pub fn new(trial: TrialConfig) -> Self {
        Self {
            version: CONFIG_VERSION,
            trial,
            grid: None,
            dropout_rates: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            HarnessError::Config(format!("unknown dataset preset {name:?}; known: {}", names.join(", ")))
        })?;
        Self::from_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Command-line overrides, applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cell: Option<CellKind>,
    pub variant: Option<RruVariant>,
    pub learning_rate: Option<f64>,
    pub dropout_rate: Option<f64>,
    pub target_params: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrialConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(kind) = self.cell {
            if cfg.cell.kind() != kind {
                cfg.cell = CellSpec::default_for(kind);
            }
        }
        if let Some(v) = self.variant {
            cfg.set_variant(v)?;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(rate) = self.dropout_rate {
            cfg.dropout_rate = rate;
        }
        if let Some(t) = self.target_params {
            cfg.set_target_params(t);
        }
        cfg.validate()
    }
}
