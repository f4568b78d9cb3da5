//! Recurrent cells as single-timestep transitions on a [`Tape`].
//!
//! [`Cell`] wraps the gateless RRU and the gated baselines behind one
//! interface: build parameters into a [`ParamStore`], produce the initial
//! state, and record one step of the recurrence.

mod gru;
mod lstm;
mod rru;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub use gru::GruCell;
pub use lstm::LstmCell;
pub use rru::{init_residual_weights, normalize, RruCell, RruParams, NORMALIZE_EPS, S_CONST_INIT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RruVariant {
    #[default]
    Standard,
    /// Skip the row normalization of the first transformation.
    NoNorm,
    /// One ReZero scale shared by all state features.
    ScalarRezero,
    /// ReLU over the candidate and the output.
    ReluOutput,
    /// Unscaled residual: `h_t = h_{t-1} + Z ⊙ c`.
    SFixedOne,
    /// `σ(S)` initialized to the constant 0.95 instead of uniform samples.
    SConstInit,
}

impl RruVariant {
    pub const ALL: [RruVariant; 6] = [
        RruVariant::Standard,
        RruVariant::NoNorm,
        RruVariant::ScalarRezero,
        RruVariant::ReluOutput,
        RruVariant::SFixedOne,
        RruVariant::SConstInit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RruVariant::Standard => "standard",
            RruVariant::NoNorm => "no_norm",
            RruVariant::ScalarRezero => "scalar_rezero",
            RruVariant::ReluOutput => "relu_output",
            RruVariant::SFixedOne => "s_fixed_one",
            RruVariant::SConstInit => "s_const_init",
        }
    }
}

impl std::str::FromStr for RruVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RruVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown RRU variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RruConfig {
    /// m
    pub input_size: usize,
    /// n
    pub state_size: usize,
    /// p
    pub output_size: usize,
    /// q: the hidden width is `round(q · (m + n))`.
    pub middle_multiplier: f64,
    /// Extra `ReLU(W j + B)` layers after the first transformation.
    pub relu_layers: usize,
    pub dropout_rate: f64,
    #[serde(default)]
    pub variant: RruVariant,
}

impl RruConfig {
    pub fn hidden_size(&self) -> usize {
        (self.middle_multiplier * (self.input_size + self.state_size) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.state_size == 0 || self.output_size == 0 {
            return Err(Error::InvalidArgument("RRU sizes must be positive".into()));
        }
        if self.middle_multiplier.is_nan() || self.middle_multiplier <= 0.0 || self.hidden_size() < 1 {
            return Err(Error::InvalidArgument(format!(
                "middle multiplier {} gives an empty hidden layer",
                self.middle_multiplier
            )));
        }
        check_dropout(self.dropout_rate)
    }

    pub fn count_params(&self) -> usize {
        let (m, n, p, g) = (self.input_size, self.state_size, self.output_size, self.hidden_size());
        let first = m * g + n * g + g;
        let relu = self.relu_layers * (g * g + g);
        let heads = g * n + n + g * p + p;
        let s = if self.variant == RruVariant::SFixedOne { 0 } else { n };
        let z = if self.variant == RruVariant::ScalarRezero { 1 } else { n };
        first + relu + heads + s + z
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Gru,
    Lstm,
    MogrifierLstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub input_size: usize,
    pub state_size: usize,
    /// Offset added to the LSTM forget-gate pre-activation.
    #[serde(default)]
    pub forget_bias: f64,
    /// Mogrifier modulation rounds.
    #[serde(default)]
    pub mog_rounds: usize,
    /// Rank of each Mogrifier modulation matrix.
    #[serde(default = "default_mog_rank")]
    pub mog_rank: usize,
    #[serde(default)]
    pub recurrent_dropout_rate: f64,
}

fn default_mog_rank() -> usize {
    40
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.state_size == 0 {
            return Err(Error::InvalidArgument("cell sizes must be positive".into()));
        }
        if self.kind == BaselineKind::MogrifierLstm && self.mog_rank == 0 {
            return Err(Error::InvalidArgument("mogrifier rank must be at least 1".into()));
        }
        check_dropout(self.recurrent_dropout_rate)
    }

    pub fn count_params(&self) -> usize {
        let (m, n) = (self.input_size, self.state_size);
        let gate = (m + n) * n + n;
        match self.kind {
            BaselineKind::Gru => 3 * gate,
            BaselineKind::Lstm => 4 * gate,
            BaselineKind::MogrifierLstm => 4 * gate + self.mog_rounds * self.mog_rank * (m + n),
        }
    }
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cell", rename_all = "snake_case")]
pub enum CellConfig {
    Rru(RruConfig),
    Baseline(BaselineConfig),
}

impl CellConfig {
    pub fn input_size(&self) -> usize {
        match self {
            CellConfig::Rru(c) => c.input_size,
            CellConfig::Baseline(c) => c.input_size,
        }
    }

    pub fn state_size(&self) -> usize {
        match self {
            CellConfig::Rru(c) => c.state_size,
            CellConfig::Baseline(c) => c.state_size,
        }
    }

    /// Width of the per-step output fed to the next layer.
    pub fn output_size(&self) -> usize {
        match self {
            CellConfig::Rru(c) => c.output_size,
            CellConfig::Baseline(c) => c.state_size,
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        match self {
            CellConfig::Rru(c) => c.dropout_rate,
            CellConfig::Baseline(c) => c.recurrent_dropout_rate,
        }
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        match self {
            CellConfig::Rru(c) => c.dropout_rate = rate,
            CellConfig::Baseline(c) => c.recurrent_dropout_rate = rate,
        }
    }

    pub fn set_input_size(&mut self, m: usize) {
        match self {
            CellConfig::Rru(c) => c.input_size = m,
            CellConfig::Baseline(c) => c.input_size = m,
        }
    }

    pub fn set_state_size(&mut self, n: usize) {
        match self {
            CellConfig::Rru(c) => c.state_size = n,
            CellConfig::Baseline(c) => c.state_size = n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellConfig::Rru(c) => c.validate(),
            CellConfig::Baseline(c) => c.validate(),
        }
    }

    /// Exact number of trainable scalars of one cell.
    pub fn count_params(&self) -> usize {
        match self {
            CellConfig::Rru(c) => c.count_params(),
            CellConfig::Baseline(c) => c.count_params(),
        }
    }
}

/// Concrete recurrent state values.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T> {
    pub h: Tensor<T>,
    /// LSTM-family cell memory.
    pub c: Option<Tensor<T>>,
}

impl<T: Real> CellState<T> {
    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// Copies row `src_row` of `other` into row `row`.
    pub fn copy_row_from(&mut self, row: usize, other: &CellState<T>, src_row: usize) {
        self.h.row_mut(row).copy_from_slice(other.h.row(src_row));
        if let (Some(c), Some(oc)) = (self.c.as_mut(), other.c.as_ref()) {
            c.row_mut(row).copy_from_slice(oc.row(src_row));
        }
    }
}

/// State as nodes on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateNodes {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

impl StateNodes {
    pub fn to_values<T: Real>(self, tape: &Tape<T>) -> CellState<T> {
        CellState {
            h: tape.value(self.h).clone(),
            c: self.c.map(|c| tape.value(c).clone()),
        }
    }

    pub fn from_values<T: Real>(tape: &mut Tape<T>, state: &CellState<T>) -> Self {
        StateNodes {
            h: tape.constant(state.h.clone()),
            c: state.c.as_ref().map(|c| tape.constant(c.clone())),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Cell {
    Rru(RruCell),
    Gru(GruCell),
    Lstm(LstmCell),
}

impl Cell {
    /// Adds freshly initialized parameters named `{prefix}.*` to `store`.
    pub fn init<T: Real>(config: &CellConfig, store: &mut ParamStore<T>, prefix: &str, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(match config {
            CellConfig::Rru(c) => Cell::Rru(RruCell::init(c.clone(), store, prefix, rng)?),
            CellConfig::Baseline(c) => match c.kind {
                BaselineKind::Gru => Cell::Gru(GruCell::init(c.clone(), store, prefix, rng)?),
                BaselineKind::Lstm | BaselineKind::MogrifierLstm => {
                    Cell::Lstm(LstmCell::init(c.clone(), store, prefix, rng)?)
                }
            },
        })
    }

    pub fn config(&self) -> CellConfig {
        match self {
            Cell::Rru(c) => CellConfig::Rru(c.config.clone()),
            Cell::Gru(c) => CellConfig::Baseline(c.config.clone()),
            Cell::Lstm(c) => CellConfig::Baseline(c.config.clone()),
        }
    }

    pub fn initial_state<T: Real>(&self, batch: usize) -> CellState<T> {
        match self {
            Cell::Rru(c) => CellState {
                h: c.initial_state(batch),
                c: None,
            },
            Cell::Gru(c) => CellState {
                h: Tensor::zeros(batch, c.config.state_size),
                c: None,
            },
            Cell::Lstm(c) => CellState {
                h: Tensor::zeros(batch, c.config.state_size),
                c: Some(Tensor::zeros(batch, c.config.state_size)),
            },
        }
    }

    /// Columns of the dropout mask this cell expects.
    pub fn mask_width(&self) -> usize {
        match self {
            Cell::Rru(c) => c.config.hidden_size(),
            Cell::Gru(c) => c.config.state_size,
            Cell::Lstm(c) => c.config.state_size,
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        self.config().dropout_rate()
    }

    /// Records one timestep and returns `(output, next_state)`.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        state: StateNodes,
        mask: Option<Tensor<T>>,
    ) -> Result<(NodeId, StateNodes)> {
        match self {
            Cell::Rru(c) => {
                let (o, h) = c.step(tape, store, x, state.h, mask)?;
                Ok((o, StateNodes { h, c: None }))
            }
            Cell::Gru(c) => {
                let h = c.step(tape, store, x, state.h, mask)?;
                Ok((h, StateNodes { h, c: None }))
            }
            Cell::Lstm(c) => {
                let mem = state
                    .c
                    .ok_or_else(|| Error::InvalidArgument("LSTM step without cell memory".into()))?;
                let (h, mem) = c.step(tape, store, x, (state.h, mem), mask)?;
                Ok((h, StateNodes { h, c: Some(mem) }))
            }
        }
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else `1 / (1 − rate)`.
pub fn dropout_mask<T: Real>(rng: &mut Rng, rate: f64, rows: usize, cols: usize) -> Result<Tensor<T>> {
    check_dropout(rate)?;
    let keep = 1.0 - rate;
    let scale = T::lit(1.0 / keep);
    Ok(rng.bernoulli_tensor::<T>(keep, rows, cols)?.map(|v| v * scale))
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<T: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    rng.uniform_tensor(-limit, limit, rows, cols)
}

pub(crate) fn add_weight<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut Rng,
    name: String,
    rows: usize,
    cols: usize,
) -> Result<ParamId> {
    Ok(store.add(name, glorot(rng, rows, cols)?))
}

pub(crate) fn add_bias<T: Real>(store: &mut ParamStore<T>, name: String, cols: usize) -> ParamId {
    store.add(name, Tensor::zeros(1, cols))
}

/// `x · W + h · U + b` on the tape.
pub(crate) fn affine2<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: NodeId,
    w: ParamId,
    h: NodeId,
    u: ParamId,
    b: ParamId,
) -> Result<NodeId> {
    let (w, u, b) = (tape.param(store, w), tape.param(store, u), tape.param(store, b));
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add(s, b)
}
