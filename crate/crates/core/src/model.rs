//! Stacked sequence models: optional embedding, recurrent layers, linear readout.
//!
//! Layer `ℓ` consumes layer `ℓ − 1`'s per-step output; the last layer's output
//! is projected to logits either at every step (language / music models) or
//! only at each row's last valid step (classification / regression).

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::cells::{dropout_mask, Cell, CellConfig, CellState, StateNodes};
use crate::error::{Error, Result};
use crate::metrics::{self, MeanAccumulator};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// Real-valued feature vectors.
    Dense { features: usize },
    /// Token ids looked up in a trainable embedding table.
    Tokens { vocab_size: usize, embedding_size: usize },
}

impl InputSpec {
    /// Width of the first layer's input.
    pub fn width(&self) -> usize {
        match *self {
            InputSpec::Dense { features } => features,
            InputSpec::Tokens { embedding_size, .. } => embedding_size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    EveryStep,
    LastStep,
}

/// Loss family. Fixes the target layout and the readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Next-step piano roll, independent Bernoulli per note.
    Music,
    /// Next-token softmax.
    Language,
    /// Softmax over classes at the last valid step.
    Classification,
    /// Squared error at the last valid step.
    Regression,
}

impl Task {
    pub fn readout(self) -> Readout {
        match self {
            Task::Music | Task::Language => Readout::EveryStep,
            Task::Classification | Task::Regression => Readout::LastStep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputSpec,
    pub layers: Vec<CellConfig>,
    pub logit_size: usize,
    pub task: Task,
    #[serde(default)]
    pub stateful: bool,
    #[serde(default)]
    pub zero_state_prob: f64,
}

impl ModelConfig {
    pub fn readout(&self) -> Readout {
        self.task.readout()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        if self.logit_size == 0 || self.input.width() == 0 {
            return Err(Error::InvalidArgument("zero-sized input or logits".into()));
        }
        if let InputSpec::Tokens { vocab_size: 0, .. } = self.input {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        if !(0.0..=1.0).contains(&self.zero_state_prob) {
            return Err(Error::InvalidArgument(format!(
                "zero_state_prob {} outside [0, 1]",
                self.zero_state_prob
            )));
        }
        let mut width = self.input.width();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.input_size() != width {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} expects input width {} but receives {width}",
                    layer.input_size()
                )));
            }
            width = layer.output_size();
        }
        Ok(())
    }

    /// Rewrites each layer's input width to chain from the input spec.
    pub fn chain_input_sizes(&mut self) {
        let mut width = self.input.width();
        for layer in &mut self.layers {
            layer.set_input_size(width);
            width = layer.output_size();
        }
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        for layer in &mut self.layers {
            layer.set_dropout_rate(rate);
        }
    }

    /// Trainable scalars including embedding and readout projection.
    pub fn count_params(&self) -> usize {
        let embedding = match self.input {
            InputSpec::Dense { .. } => 0,
            InputSpec::Tokens {
                vocab_size,
                embedding_size,
            } => vocab_size * embedding_size,
        };
        let cells: usize = self.layers.iter().map(CellConfig::count_params).sum();
        let last = self.layers.last().map_or(0, CellConfig::output_size);
        embedding + cells + last * self.logit_size + self.logit_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchInputs<T> {
    /// One `batch × features` tensor per step.
    Dense(Vec<Tensor<T>>),
    /// One id per row per step.
    Tokens(Vec<Vec<usize>>),
}

impl<T> BatchInputs<T> {
    pub fn steps(&self) -> usize {
        match self {
            BatchInputs::Dense(x) => x.len(),
            BatchInputs::Tokens(x) => x.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchTargets<T> {
    /// Binary note masks per step.
    Notes(Vec<Tensor<T>>),
    /// Next-token ids per step.
    Tokens(Vec<Vec<usize>>),
    /// One class per row.
    Labels(Vec<usize>),
    /// One `batch × k` regression target.
    Values(Tensor<T>),
}

/// Padded, time-major batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<T> {
    pub inputs: BatchInputs<T>,
    pub targets: BatchTargets<T>,
    /// Valid leading steps per row.
    pub lengths: Vec<usize>,
    /// `steps × batch`; false entries are excluded from per-step losses.
    pub target_mask: Vec<Vec<bool>>,
}

impl<T: Real> SequenceBatch<T> {
    /// Batch whose per-step loss mask is `t < length`.
    pub fn new(inputs: BatchInputs<T>, targets: BatchTargets<T>, lengths: Vec<usize>) -> Result<Self> {
        let target_mask = metrics::mask_from_lengths(inputs.steps(), &lengths);
        let batch = Self {
            inputs,
            targets,
            lengths,
            target_mask,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn with_target_mask(mut self, mask: Vec<Vec<bool>>) -> Result<Self> {
        self.target_mask = mask;
        self.validate()?;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.inputs.steps()
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (steps, b) = (self.steps(), self.batch_size());
        if steps == 0 || b == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if self.lengths.iter().any(|&l| l == 0 || l > steps) {
            return Err(Error::Data(format!("lengths {:?} not in 1..={steps}", self.lengths)));
        }
        let rows_ok = match &self.inputs {
            BatchInputs::Dense(x) => x.iter().all(|t| t.rows() == b),
            BatchInputs::Tokens(x) => x.iter().all(|t| t.len() == b),
        };
        let targets_ok = match &self.targets {
            BatchTargets::Notes(y) => y.len() == steps && y.iter().all(|t| t.rows() == b),
            BatchTargets::Tokens(y) => y.len() == steps && y.iter().all(|t| t.len() == b),
            BatchTargets::Labels(y) => y.len() == b,
            BatchTargets::Values(y) => y.rows() == b,
        };
        let mask_ok = self.target_mask.len() == steps && self.target_mask.iter().all(|m| m.len() == b);
        if !(rows_ok && targets_ok && mask_ok) {
            return Err(Error::Data("batch rows, targets or mask are inconsistent".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles produced by one unroll.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Per-step logits (`EveryStep`) or a single `batch × logits` node (`LastStep`).
    pub logits: Vec<NodeId>,
    /// Per-layer state after each row's last valid step.
    pub final_states: Vec<StateNodes>,
}

/// Evaluation sums, mergeable across batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalSums {
    /// Task loss in nats (squared error for regression).
    pub loss: MeanAccumulator,
    /// Classification only.
    pub accuracy: MeanAccumulator,
}

impl EvalSums {
    pub fn merge(&mut self, other: EvalSums) {
        self.loss.merge(other.loss);
        self.accuracy.merge(other.accuracy);
    }
}

/// Layer structure and parameter handles; the values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub embedding: Option<ParamId>,
    pub cells: Vec<Cell>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl Network {
    pub fn init<T: Real>(config: ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let embedding = match config.input {
            InputSpec::Dense { .. } => None,
            InputSpec::Tokens {
                vocab_size,
                embedding_size,
            } => {
                let limit = (6.0 / (vocab_size + embedding_size) as f64).sqrt();
                Some(store.add("embed", rng.uniform_tensor(-limit, limit, vocab_size, embedding_size)?))
            }
        };
        let cells = config
            .layers
            .iter()
            .enumerate()
            .map(|(i, c)| Cell::init(c, store, &format!("layer{i}"), rng))
            .collect::<Result<Vec<_>>>()?;
        let last = config.layers.last().map_or(0, CellConfig::output_size);
        let limit = (6.0 / (last + config.logit_size) as f64).sqrt();
        let proj_w = store.add("proj.w", rng.uniform_tensor(-limit, limit, last, config.logit_size)?);
        let proj_b = store.add("proj.b", Tensor::zeros(1, config.logit_size));
        Ok(Self {
            config,
            embedding,
            cells,
            proj_w,
            proj_b,
        })
    }

    pub fn initial_states<T: Real>(&self, batch: usize) -> Vec<CellState<T>> {
        self.cells.iter().map(|c| c.initial_state(batch)).collect()
    }

    fn input_node<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: &BatchInputs<T>,
        t: usize,
    ) -> Result<NodeId> {
        match (inputs, &self.config.input, self.embedding) {
            (BatchInputs::Dense(x), InputSpec::Dense { features }, _) => {
                if x[t].cols() != *features {
                    return Err(Error::shape("input", x[t].shape(), [x[t].rows(), *features]));
                }
                Ok(tape.constant(x[t].clone()))
            }
            (BatchInputs::Tokens(ids), InputSpec::Tokens { .. }, Some(table)) => {
                let table = tape.param(store, table);
                tape.gather(table, &ids[t])
            }
            _ => Err(Error::Data("batch inputs do not match the model's input spec".into())),
        }
    }

    /// Starting states: `carry` when stateful (with per-row zero-state resets in
    /// training), otherwise the cells' initial states.
    fn start_states<T: Real>(
        &self,
        batch: usize,
        mode: Mode,
        rng: &mut Rng,
        carry: Option<&[CellState<T>]>,
    ) -> Result<Vec<CellState<T>>> {
        let fresh = self.initial_states(batch);
        let carry = match carry {
            Some(c) if self.config.stateful => c,
            _ => return Ok(fresh),
        };
        if carry.len() != self.cells.len() || carry.iter().any(|s| s.batch() != batch) {
            return Err(Error::InvalidArgument(
                "carried state does not match model and batch".into(),
            ));
        }
        let mut states = carry.to_vec();
        let p = self.config.zero_state_prob;
        if mode == Mode::Train && p > 0.0 {
            for r in 0..batch {
                // p = 1 resets without consuming randomness, so it matches a stateless run
                if p >= 1.0 || rng.bernoulli(p) {
                    for (s, f) in states.iter_mut().zip(&fresh) {
                        s.copy_row_from(r, f, r);
                    }
                }
            }
        }
        Ok(states)
    }

    /// Unrolls all layers over the batch. Rows past their length keep their state.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &SequenceBatch<T>,
        mode: Mode,
        rng: &mut Rng,
        carry: Option<&[CellState<T>]>,
    ) -> Result<Forward> {
        batch.validate()?;
        let (steps, b) = (batch.steps(), batch.batch_size());
        let start = self.start_states(b, mode, rng, carry)?;
        let mut states: Vec<StateNodes> = start.iter().map(|s| StateNodes::from_values(tape, s)).collect();
        let ragged = batch.lengths.iter().any(|&l| l < steps);
        let readout = self.config.readout();
        let (pw, pb) = (tape.param(store, self.proj_w), tape.param(store, self.proj_b));

        let mut logits = Vec::with_capacity(steps);
        let mut top_outputs = Vec::new();
        for t in 0..steps {
            let mut x = self.input_node(tape, store, &batch.inputs, t)?;
            for (l, cell) in self.cells.iter().enumerate() {
                let rate = cell.dropout_rate();
                let mask = if mode == Mode::Train && rate > 0.0 {
                    Some(dropout_mask(rng, rate, b, cell.mask_width())?)
                } else {
                    None
                };
                let (out, next) = cell.step(tape, store, x, states[l], mask)?;
                if !tape.value(next.h).is_finite() || !tape.value(out).is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("layer {l} step {t}"),
                    });
                }
                states[l] = if ragged && batch.lengths.iter().any(|&len| t >= len) {
                    freeze_finished(tape, states[l], next, &batch.lengths, t)?
                } else {
                    next
                };
                x = out;
            }
            match readout {
                Readout::EveryStep => {
                    let z = tape.matmul(x, pw)?;
                    logits.push(tape.add(z, pb)?);
                }
                Readout::LastStep => top_outputs.push(x),
            }
        }
        if readout == Readout::LastStep {
            let picks: Vec<usize> = batch.lengths.iter().map(|&l| l - 1).collect();
            let last = tape.select_rows(&top_outputs, &picks)?;
            let z = tape.matmul(last, pw)?;
            logits.push(tape.add(z, pb)?);
        }
        Ok(Forward {
            logits,
            final_states: states,
        })
    }

    /// Mean task loss as a scalar node.
    pub fn loss<T: Real>(&self, tape: &mut Tape<T>, fwd: &Forward, batch: &SequenceBatch<T>) -> Result<NodeId> {
        let task = self.config.task;
        let mut terms = Vec::new();
        match (&batch.targets, task) {
            (BatchTargets::Notes(y), Task::Music) => {
                let w = step_weights::<T>(&batch.target_mask)?;
                for ((&z, y), w) in fwd.logits.iter().zip(y).zip(w) {
                    if w.iter().any(|&v| v != T::zero()) {
                        terms.push(tape.bce_with_logits(z, y.clone(), w)?);
                    }
                }
            }
            (BatchTargets::Tokens(y), Task::Language) => {
                let w = step_weights::<T>(&batch.target_mask)?;
                for ((&z, y), w) in fwd.logits.iter().zip(y).zip(w) {
                    if w.iter().any(|&v| v != T::zero()) {
                        terms.push(tape.softmax_xent(z, y.clone(), w)?);
                    }
                }
            }
            (BatchTargets::Labels(y), Task::Classification) => {
                let w = vec![T::lit(1.0 / y.len() as f64); y.len()];
                terms.push(tape.softmax_xent(fwd.logits[0], y.clone(), w)?);
            }
            (BatchTargets::Values(y), Task::Regression) => {
                let w = vec![T::lit(1.0 / y.rows() as f64); y.rows()];
                terms.push(tape.squared_error(fwd.logits[0], y.clone(), w)?);
            }
            _ => return Err(Error::Data(format!("batch targets do not fit the {task:?} task"))),
        }
        let mut total = *terms
            .first()
            .ok_or_else(|| Error::Data("batch has no valid targets".into()))?;
        for &term in &terms[1..] {
            total = tape.add(total, term)?;
        }
        Ok(total)
    }

    /// Loss (and accuracy) sums from logit values.
    pub fn eval_sums<T: Real>(&self, tape: &Tape<T>, fwd: &Forward, batch: &SequenceBatch<T>) -> Result<EvalSums> {
        let logits: Vec<Tensor<T>> = fwd.logits.iter().map(|&z| tape.value(z).clone()).collect();
        let mut sums = EvalSums::default();
        match &batch.targets {
            BatchTargets::Notes(y) => sums.loss = metrics::music_nll_sum(&logits, y, &batch.target_mask)?,
            BatchTargets::Tokens(y) => sums.loss = metrics::cross_entropy_sum(&logits, y, &batch.target_mask)?,
            BatchTargets::Labels(y) => {
                let ids = vec![y.clone()];
                let mask = vec![vec![true; y.len()]];
                sums.loss = metrics::cross_entropy_sum(&logits, &ids, &mask)?;
                sums.accuracy = metrics::accuracy_sum(&logits[0], y)?;
            }
            BatchTargets::Values(y) => sums.loss = metrics::squared_error_sum(&logits[0], y)?,
        }
        Ok(sums)
    }
}

/// Keeps the previous state for rows whose sequence ended before step `t`.
fn freeze_finished<T: Real>(
    tape: &mut Tape<T>,
    prev: StateNodes,
    next: StateNodes,
    lengths: &[usize],
    t: usize,
) -> Result<StateNodes> {
    let picks: Vec<usize> = lengths.iter().map(|&l| usize::from(t >= l)).collect();
    let h = tape.select_rows(&[next.h, prev.h], &picks)?;
    let c = match (next.c, prev.c) {
        (Some(nc), Some(pc)) => Some(tape.select_rows(&[nc, pc], &picks)?),
        _ => None,
    };
    Ok(StateNodes { h, c })
}

/// Per-step row weights `1 / (valid positions)` for masked entries.
fn step_weights<T: Real>(mask: &[Vec<bool>]) -> Result<Vec<Vec<T>>> {
    let count = mask.iter().flatten().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::Data("batch has no valid targets".into()));
    }
    let w = T::lit(1.0 / count as f64);
    Ok(mask
        .iter()
        .map(|m| m.iter().map(|&v| if v { w } else { T::zero() }).collect())
        .collect())
}

/// Parameters plus structure.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: Network,
    pub store: ParamStore<T>,
}

/// Outcome of one optimization step's forward/backward.
#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub loss: f64,
    pub final_states: Vec<CellState<T>>,
}

impl<T: Real> Model<T> {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::init(config, &mut store, rng)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }

    /// Same parameters, per-step readout.
    pub fn lm_head(&self) -> Self {
        let mut m = self.clone();
        m.net.config.task = match m.net.config.task {
            Task::Classification => Task::Language,
            Task::Regression => Task::Music,
            t => t,
        };
        m
    }

    /// Same parameters, last-step readout.
    pub fn classifier_head(&self) -> Self {
        let mut m = self.clone();
        m.net.config.task = match m.net.config.task {
            Task::Language => Task::Classification,
            Task::Music => Task::Regression,
            t => t,
        };
        m
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        batch: &SequenceBatch<T>,
        mode: Mode,
        rng: &mut Rng,
        carry: Option<&[CellState<T>]>,
    ) -> Result<Forward> {
        self.net.forward(tape, &self.store, batch, mode, rng, carry)
    }

    /// Logit values per readout position, evaluation mode.
    pub fn predict(&self, batch: &SequenceBatch<T>, carry: Option<&[CellState<T>]>) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, Mode::Eval, &mut Rng::new(0), carry)?;
        Ok(fwd.logits.iter().map(|&z| tape.value(z).clone()).collect())
    }

    /// Forward and backward in training mode; gradients are added to the store.
    pub fn train_step(
        &mut self,
        batch: &SequenceBatch<T>,
        rng: &mut Rng,
        carry: Option<&[CellState<T>]>,
    ) -> Result<StepOutput<T>> {
        let mut tape = Tape::new();
        let fwd = self
            .net
            .forward(&mut tape, &self.store, batch, Mode::Train, rng, carry)?;
        let loss = self.net.loss(&mut tape, &fwd, batch)?;
        let value = tape.value(loss).item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                location: "training loss".into(),
            });
        }
        tape.backward(loss, &mut self.store)?;
        let final_states = fwd.final_states.iter().map(|s| s.to_values(&tape)).collect();
        Ok(StepOutput {
            loss: value,
            final_states,
        })
    }

    /// Evaluation-mode sums and the final states.
    pub fn evaluate(
        &self,
        batch: &SequenceBatch<T>,
        carry: Option<&[CellState<T>]>,
    ) -> Result<(EvalSums, Vec<CellState<T>>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, Mode::Eval, &mut Rng::new(0), carry)?;
        let sums = self.net.eval_sums(&tape, &fwd, batch)?;
        let states = fwd.final_states.iter().map(|s| s.to_values(&tape)).collect();
        Ok((sums, states))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{BaselineConfig, BaselineKind, RruConfig, RruVariant};

    fn rru(m: usize, n: usize, p: usize, dropout: f64) -> CellConfig {
        CellConfig::Rru(RruConfig {
            input_size: m,
            state_size: n,
            output_size: p,
            middle_multiplier: 1.0,
            relu_layers: 1,
            dropout_rate: dropout,
            variant: RruVariant::Standard,
        })
    }

    fn dense_config(task: Task, logits: usize) -> ModelConfig {
        ModelConfig {
            input: InputSpec::Dense { features: 3 },
            layers: vec![rru(3, 5, 4, 0.0), rru(4, 6, 3, 0.0)],
            logit_size: logits,
            task,
            stateful: false,
            zero_state_prob: 0.0,
        }
    }

    fn dense_batch(rng: &mut Rng, steps: usize, lengths: Vec<usize>, logits: usize) -> SequenceBatch<f64> {
        let b = lengths.len();
        let x = (0..steps)
            .map(|_| rng.uniform_tensor(-1.0, 1.0, b, 3).unwrap())
            .collect();
        let y = (0..steps)
            .map(|_| rng.bernoulli_tensor(0.3, b, logits).unwrap())
            .collect();
        SequenceBatch::new(BatchInputs::Dense(x), BatchTargets::Notes(y), lengths).unwrap()
    }

    #[test]
    fn count_matches_store() {
        let mut cfg = dense_config(Task::Music, 7);
        let m = Model::<f64>::init(cfg.clone(), &mut Rng::new(0)).unwrap();
        assert_eq!(m.num_params(), cfg.count_params());

        cfg.input = InputSpec::Tokens {
            vocab_size: 11,
            embedding_size: 3,
        };
        cfg.layers[1] = CellConfig::Baseline(BaselineConfig {
            kind: BaselineKind::Lstm,
            input_size: 4,
            state_size: 5,
            forget_bias: 1.0,
            mog_rounds: 0,
            mog_rank: 40,
            recurrent_dropout_rate: 0.0,
        });
        let m = Model::<f64>::init(cfg.clone(), &mut Rng::new(0)).unwrap();
        assert_eq!(m.num_params(), cfg.count_params());
    }

    #[test]
    fn mismatched_layer_widths_rejected() {
        let mut cfg = dense_config(Task::Music, 7);
        cfg.layers[1].set_input_size(9);
        assert!(cfg.validate().is_err());
        cfg.chain_input_sizes();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn single_step_fresh_rru_readout() {
        // one layer, T = 1: logits = (d·Wo + Bo)·P + b
        let cfg = ModelConfig {
            layers: vec![rru(3, 5, 4, 0.0)],
            ..dense_config(Task::Music, 2)
        };
        let model = Model::<f64>::init(cfg, &mut Rng::new(3)).unwrap();
        let batch = dense_batch(&mut Rng::new(4), 1, vec![1, 1], 2);
        let got = model.predict(&batch, None).unwrap();

        let Cell::Rru(cell) = &model.net.cells[0] else {
            unreachable!()
        };
        let mut tape = Tape::new();
        let BatchInputs::Dense(x) = &batch.inputs else {
            unreachable!()
        };
        let x = tape.constant(x[0].clone());
        let h = tape.constant(cell.initial_state(2));
        let (o, _) = cell.step(&mut tape, &model.store, x, h, None).unwrap();
        let expected = tape
            .value(o)
            .matmul(model.store.value(model.net.proj_w))
            .unwrap()
            .add(model.store.value(model.net.proj_b))
            .unwrap();
        assert_eq!(got[0], expected);
    }

    #[test]
    fn padding_does_not_change_loss() {
        let model = Model::<f64>::init(dense_config(Task::Music, 4), &mut Rng::new(1)).unwrap();
        let short = dense_batch(&mut Rng::new(2), 3, vec![3, 2], 4);
        let mut long = short.clone();
        let mut rng = Rng::new(9);
        if let (BatchInputs::Dense(x), BatchTargets::Notes(y)) = (&mut long.inputs, &mut long.targets) {
            for _ in 0..2 {
                x.push(rng.uniform_tensor(-5.0, 5.0, 2, 3).unwrap());
                y.push(rng.bernoulli_tensor(0.5, 2, 4).unwrap());
            }
        }
        let long = SequenceBatch::new(long.inputs, long.targets, long.lengths).unwrap();
        let (a, sa) = model.evaluate(&short, None).unwrap();
        let (b, sb) = model.evaluate(&long, None).unwrap();
        assert!((a.loss.mean() - b.loss.mean()).abs() < 1e-9);
        assert_eq!(sa, sb);

        let loss = |batch: &SequenceBatch<f64>| {
            let mut tape = Tape::new();
            let fwd = model
                .forward(&mut tape, batch, Mode::Eval, &mut Rng::new(0), None)
                .unwrap();
            let l = model.net.loss(&mut tape, &fwd, batch).unwrap();
            tape.value(l).item().unwrap()
        };
        assert!((loss(&short) - loss(&long)).abs() < 1e-9);
    }

    #[test]
    fn classifier_ignores_padding_and_matches_lm_on_length_one() {
        let model = Model::<f64>::init(dense_config(Task::Classification, 3), &mut Rng::new(5)).unwrap();
        let mut rng = Rng::new(6);
        let x: Vec<Tensor<f64>> = (0..4).map(|_| rng.uniform_tensor(-1.0, 1.0, 2, 3).unwrap()).collect();
        let batch = |steps: usize, lengths: Vec<usize>| {
            SequenceBatch::new(
                BatchInputs::Dense(x[..steps].to_vec()),
                BatchTargets::Labels(vec![0, 2]),
                lengths,
            )
            .unwrap()
        };
        let a = model.predict(&batch(2, vec![2, 1]), None).unwrap();
        let b = model.predict(&batch(4, vec![2, 1]), None).unwrap();
        assert_eq!(a, b);

        let one = batch(1, vec![1, 1]);
        let cls = model.predict(&one, None).unwrap();
        let lm = model.lm_head();
        let lm_batch =
            SequenceBatch::new(one.inputs.clone(), BatchTargets::Tokens(vec![vec![0, 2]]), vec![1, 1]).unwrap();
        assert_eq!(cls[0], lm.predict(&lm_batch, None).unwrap()[0]);
    }

    #[test]
    fn eval_is_deterministic_and_train_uses_dropout() {
        let mut cfg = dense_config(Task::Music, 4);
        cfg.set_dropout_rate(0.5);
        let model = Model::<f64>::init(cfg, &mut Rng::new(1)).unwrap();
        let batch = dense_batch(&mut Rng::new(2), 4, vec![4, 4], 4);
        assert_eq!(
            model.predict(&batch, None).unwrap(),
            model.predict(&batch, None).unwrap()
        );

        let mut tape = Tape::new();
        let fwd = model
            .forward(&mut tape, &batch, Mode::Train, &mut Rng::new(3), None)
            .unwrap();
        let train = tape.value(fwd.logits[3]).clone();
        assert_ne!(train, model.predict(&batch, None).unwrap()[3]);
    }

    #[test]
    fn stateful_windows_continue_a_long_window() {
        let mut cfg = dense_config(Task::Music, 4);
        cfg.stateful = true;
        let model = Model::<f64>::init(cfg, &mut Rng::new(11)).unwrap();
        let whole = dense_batch(&mut Rng::new(12), 6, vec![6, 6], 4);
        let split = |lo: usize, hi: usize| {
            let (BatchInputs::Dense(x), BatchTargets::Notes(y)) = (&whole.inputs, &whole.targets) else {
                unreachable!()
            };
            SequenceBatch::new(
                BatchInputs::Dense(x[lo..hi].to_vec()),
                BatchTargets::Notes(y[lo..hi].to_vec()),
                vec![hi - lo; 2],
            )
            .unwrap()
        };
        let (_, s_whole) = model.evaluate(&whole, None).unwrap();
        let (_, s1) = model.evaluate(&split(0, 3), None).unwrap();
        let (_, s2) = model.evaluate(&split(3, 6), Some(&s1)).unwrap();
        for (a, b) in s_whole.iter().zip(&s2) {
            for (x, y) in a.h.data().iter().zip(b.h.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_state_prob_one_matches_stateless() {
        let mut cfg = dense_config(Task::Music, 4);
        cfg.set_dropout_rate(0.3);
        let stateless = Model::<f64>::init(cfg.clone(), &mut Rng::new(2)).unwrap();
        cfg.stateful = true;
        cfg.zero_state_prob = 1.0;
        let stateful = Model::<f64>::init(cfg, &mut Rng::new(2)).unwrap();
        let batch = dense_batch(&mut Rng::new(3), 3, vec![3, 3], 4);
        let carry: Vec<CellState<f64>> = stateful
            .net
            .initial_states(2)
            .into_iter()
            .map(|mut s| {
                s.h = s.h.map(|v| v + 0.7);
                s
            })
            .collect();
        let run = |m: &Model<f64>, carry: Option<&[CellState<f64>]>| {
            let mut tape = Tape::new();
            let fwd = m
                .forward(&mut tape, &batch, Mode::Train, &mut Rng::new(4), carry)
                .unwrap();
            fwd.logits.iter().map(|&z| tape.value(z).clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(&stateless, None), run(&stateful, Some(&carry)));
    }

    #[test]
    fn non_finite_activation_names_layer_and_step() {
        let mut model = Model::<f64>::init(dense_config(Task::Music, 4), &mut Rng::new(1)).unwrap();
        let id = model.store.find("layer1.wx").unwrap();
        model.store.get_mut(id).value.set(0, 0, f64::NAN);
        let batch = dense_batch(&mut Rng::new(2), 2, vec![2, 2], 4);
        match model.predict(&batch, None) {
            Err(Error::NonFinite { location }) => assert_eq!(location, "layer 1 step 0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_targets_rejected() {
        let model = Model::<f64>::init(dense_config(Task::Language, 4), &mut Rng::new(1)).unwrap();
        let batch = dense_batch(&mut Rng::new(2), 2, vec![2, 2], 4);
        let mut tape = Tape::new();
        let fwd = model
            .forward(&mut tape, &batch, Mode::Eval, &mut Rng::new(0), None)
            .unwrap();
        assert!(model.net.loss(&mut tape, &fwd, &batch).is_err());
    }
}
