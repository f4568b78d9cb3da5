//! Finite-difference checks of whole cells and models at random test points.
//!
//! Every parameter (including ReZero scales and residual weights) is moved
//! off its initial value so all paths carry gradient. Test points whose
//! forward pass puts a ReLU input within [`RELU_MARGIN`] of zero are redrawn:
//! central differences straddling a kink do not estimate a derivative.

use crate::autodiff::{grad_check, GradCheckReport, NodeId, ParamStore, Tape};
use crate::cells::{dropout_mask, BaselineConfig, BaselineKind, Cell, CellConfig, RruConfig, RruVariant, StateNodes};
use crate::error::{Error, Result};
use crate::model::{BatchInputs, BatchTargets, InputSpec, Mode, ModelConfig, Network, SequenceBatch, Task};
use crate::rng::Rng;
use crate::tensor::{compensated_sum, Tensor};

pub const RELU_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 200;

fn randomize(store: &mut ParamStore<f64>, rng: &mut Rng) -> Result<()> {
    for p in store.iter_mut() {
        let [r, c] = p.value.shape();
        let name = p.name.rsplit('.').next().unwrap_or("");
        p.value = match name {
            // residual weights kept where σ' is not vanishing
            "s" => rng.uniform_tensor(-2.0, 2.0, r, c)?,
            "z" => rng.uniform_tensor(-1.0, 1.0, r, c)?,
            _ if r == 1 => rng.uniform_tensor(-0.5, 0.5, r, c)?,
            _ => {
                let limit = (6.0 / (r + c) as f64).sqrt();
                rng.uniform_tensor(-limit, limit, r, c)?
            }
        };
    }
    Ok(())
}

struct CellPoint {
    xs: Vec<Tensor<f64>>,
    h0: Tensor<f64>,
    c0: Option<Tensor<f64>>,
    masks: Vec<Option<Tensor<f64>>>,
    w_out: Vec<Tensor<f64>>,
    w_h: Tensor<f64>,
    w_c: Option<Tensor<f64>>,
}

fn cell_loss(cell: &Cell, tape: &mut Tape<f64>, store: &ParamStore<f64>, pt: &CellPoint) -> Result<NodeId> {
    let mut state = StateNodes {
        h: tape.constant(pt.h0.clone()),
        c: pt.c0.as_ref().map(|c| tape.constant(c.clone())),
    };
    let mut terms = Vec::new();
    for ((x, mask), w) in pt.xs.iter().zip(&pt.masks).zip(&pt.w_out) {
        let x = tape.constant(x.clone());
        let (o, next) = cell.step(tape, store, x, state, mask.clone())?;
        state = next;
        let wo = tape.mul_const(o, w.clone())?;
        terms.push(tape.sum(wo));
    }
    let wh = tape.mul_const(state.h, pt.w_h.clone())?;
    terms.push(tape.sum(wh));
    if let (Some(c), Some(w)) = (state.c, &pt.w_c) {
        let wc = tape.mul_const(c, w.clone())?;
        terms.push(tape.sum(wc));
    }
    Ok(sum_scalars(tape, &terms))
}

/// Compensated sum of `1 × 1` nodes, so the loss adds little roundoff of its own.
fn sum_scalars(tape: &mut Tape<f64>, terms: &[NodeId]) -> NodeId {
    let total = compensated_sum(terms.iter().map(|&t| tape.value(t).data()[0]));
    tape.custom(
        terms,
        Tensor::scalar(total),
        Box::new(|g, inputs, _| Ok(vec![g.clone(); inputs.len()])),
    )
}

/// Checks one cell unrolled for `steps` over `batch` rows against a random
/// linear functional of all outputs and the final state. Dropout, when the
/// config enables it, uses masks sampled once per test point.
pub fn cell_grad_check(
    config: &CellConfig,
    steps: usize,
    batch: usize,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::<f64>::new();
    let cell = Cell::init(config, &mut store, "cell", &mut rng)?;
    let (m, n) = (config.input_size(), config.state_size());
    let out = config.output_size();
    for _ in 0..MAX_DRAWS {
        randomize(&mut store, &mut rng)?;
        let rate = config.dropout_rate();
        let pt = CellPoint {
            xs: (0..steps)
                .map(|_| rng.uniform_tensor(-1.0, 1.0, batch, m))
                .collect::<Result<_>>()?,
            h0: rng.uniform_tensor(-1.0, 1.0, batch, n)?,
            c0: match cell {
                Cell::Lstm(_) => Some(rng.uniform_tensor(-1.0, 1.0, batch, n)?),
                _ => None,
            },
            masks: (0..steps)
                .map(|_| {
                    if rate > 0.0 {
                        dropout_mask(&mut rng, rate, batch, cell.mask_width()).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?,
            w_out: (0..steps)
                .map(|_| rng.uniform_tensor(-1.0, 1.0, batch, out))
                .collect::<Result<_>>()?,
            w_h: rng.uniform_tensor(-1.0, 1.0, batch, n)?,
            w_c: match cell {
                Cell::Lstm(_) => Some(rng.uniform_tensor(-1.0, 1.0, batch, n)?),
                _ => None,
            },
        };
        let mut probe = Tape::new();
        cell_loss(&cell, &mut probe, &store, &pt)?;
        if probe.min_relu_margin().is_none_or(|d| d >= RELU_MARGIN) {
            return grad_check(&mut store, eps, tol, |tape, store| cell_loss(&cell, tape, store, &pt));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no kink-free test point in {MAX_DRAWS} draws"
    )))
}

fn random_batch(config: &ModelConfig, steps: usize, batch: usize, rng: &mut Rng) -> Result<SequenceBatch<f64>> {
    let inputs = match config.input {
        InputSpec::Dense { features } => BatchInputs::Dense(
            (0..steps)
                .map(|_| rng.uniform_tensor(-1.0, 1.0, batch, features))
                .collect::<Result<_>>()?,
        ),
        InputSpec::Tokens { vocab_size, .. } => BatchInputs::Tokens(
            (0..steps)
                .map(|_| (0..batch).map(|_| rng.below(vocab_size)).collect())
                .collect(),
        ),
    };
    let k = config.logit_size;
    let targets = match config.task {
        Task::Music => BatchTargets::Notes(
            (0..steps)
                .map(|_| rng.bernoulli_tensor(0.3, batch, k))
                .collect::<Result<_>>()?,
        ),
        Task::Language => {
            BatchTargets::Tokens((0..steps).map(|_| (0..batch).map(|_| rng.below(k)).collect()).collect())
        }
        Task::Classification => BatchTargets::Labels((0..batch).map(|_| rng.below(k)).collect()),
        Task::Regression => BatchTargets::Values(rng.uniform_tensor(-1.0, 1.0, batch, k)?),
    };
    // ragged lengths exercise state freezing
    let lengths = (0..batch)
        .map(|r| if r % 2 == 1 { steps.div_ceil(2) } else { steps })
        .collect();
    SequenceBatch::new(inputs, targets, lengths)
}

/// Checks a full model's task loss on a random ragged batch, dropout masks
/// frozen by reseeding the mask stream for every evaluation.
pub fn model_grad_check(
    config: &ModelConfig,
    steps: usize,
    batch: usize,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::<f64>::new();
    let net = Network::init(config.clone(), &mut store, &mut rng)?;
    let mask_seed = rng.next_u64();
    let loss = |net: &Network, tape: &mut Tape<f64>, store: &ParamStore<f64>, b: &SequenceBatch<f64>| {
        let fwd = net.forward(tape, store, b, Mode::Train, &mut Rng::new(mask_seed), None)?;
        net.loss(tape, &fwd, b)
    };
    for _ in 0..MAX_DRAWS {
        randomize(&mut store, &mut rng)?;
        let b = random_batch(config, steps, batch, &mut rng)?;
        let mut probe = Tape::new();
        loss(&net, &mut probe, &store, &b)?;
        if probe.min_relu_margin().is_none_or(|d| d >= RELU_MARGIN) {
            return grad_check(&mut store, eps, tol, |tape, store| loss(&net, tape, store, &b));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no kink-free test point in {MAX_DRAWS} draws"
    )))
}

/// Difference step and tolerance of the standard suite.
pub const SUITE_EPS: f64 = 1e-5;
pub const SUITE_TOL: f64 = 1e-5;

/// One cell configuration of the standard suite.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub label: String,
    pub config: CellConfig,
    pub steps: usize,
    pub batch: usize,
}

/// Random small shape derived from the seed: (m, n, p, steps, batch).
fn suite_dims(seed: u64) -> (usize, usize, usize, usize, usize) {
    let mut rng = Rng::new(seed ^ 0x5eed);
    (
        1 + rng.below(8),
        1 + rng.below(8),
        1 + rng.below(8),
        1 + rng.below(5),
        1 + rng.below(3),
    )
}

/// Every RRU variant, GRU, LSTM and Mogrifier LSTM with 0, 2 and 5 rounds on
/// seed-derived dimensions `m, n, p ≤ 8`, `T ≤ 5`, batch `≤ 3`. Even seeds
/// enable dropout.
pub fn suite_cases(seed: u64) -> Vec<SuiteCase> {
    let (m, n, p, steps, batch) = suite_dims(seed);
    let mut rng = Rng::new(seed);
    let q = rng.uniform_range(0.5, 2.0).expect("valid range");
    let relu_layers = rng.below(3);
    let mut cases: Vec<SuiteCase> = RruVariant::ALL
        .into_iter()
        .map(|variant| SuiteCase {
            label: variant.name().to_string(),
            config: CellConfig::Rru(RruConfig {
                input_size: m,
                state_size: n,
                output_size: p,
                middle_multiplier: q,
                relu_layers,
                dropout_rate: if seed.is_multiple_of(2) { 0.3 } else { 0.0 },
                variant,
            }),
            steps,
            batch,
        })
        .collect();
    let baseline = |kind, rounds| {
        CellConfig::Baseline(BaselineConfig {
            kind,
            input_size: m,
            state_size: n,
            forget_bias: 1.0,
            mog_rounds: rounds,
            mog_rank: 1 + (seed as usize % 8),
            recurrent_dropout_rate: if seed.is_multiple_of(2) { 0.25 } else { 0.0 },
        })
    };
    let mut push = |label: String, config| {
        cases.push(SuiteCase {
            label,
            config,
            steps,
            batch,
        })
    };
    push("gru".into(), baseline(BaselineKind::Gru, 0));
    push("lstm".into(), baseline(BaselineKind::Lstm, 0));
    for rounds in [0, 2, 5] {
        push(
            format!("mogrifier_r{rounds}"),
            baseline(BaselineKind::MogrifierLstm, rounds),
        );
    }
    cases
}

/// Runs one suite case at the suite's step and tolerance.
pub fn run_suite_case(case: &SuiteCase, seed: u64) -> Result<GradCheckReport> {
    cell_grad_check(&case.config, case.steps, case.batch, seed, SUITE_EPS, SUITE_TOL)
}
