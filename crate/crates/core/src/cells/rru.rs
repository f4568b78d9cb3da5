//! Residual Recurrent Unit.
//!
//! ```text
//! j   = ReLU(Normalize(x·Wx + h·Wh + Bj))
//! j   = ReLU(j·Wk + Bk)            (relu_layers times)
//! d   = Dropout(j)
//! c   = d·Wc + Bc
//! h'  = σ(S) ⊙ h + Z ⊙ c
//! o   = d·Wo + Bo
//! ```
//!
//! There are no gates: the two products in the state update multiply
//! activations by learned per-feature constants only. `Z` starts at zero, so
//! a fresh cell carries its state forward as `σ(S)^t ⊙ h₀`.

use crate::autodiff::{self, NodeId, ParamId, ParamStore, Tape};
use crate::cells::{add_bias, add_weight, RruConfig, RruVariant};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const NORMALIZE_EPS: f64 = 1e-6;

/// `σ(S)` of the constant-initialization variant.
pub const S_CONST_INIT: f64 = 0.95;

/// Residual-weight samples are drawn from `[S_GUARD, 1 − S_GUARD]` before the logit.
const S_GUARD: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct RruParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bj: ParamId,
    pub wk: Vec<ParamId>,
    pub bk: Vec<ParamId>,
    pub wc: ParamId,
    pub bc: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    /// Pre-sigmoid residual weights; absent for [`RruVariant::SFixedOne`].
    pub s: Option<ParamId>,
    /// ReZero scales, `1 × n` or `1 × 1` for [`RruVariant::ScalarRezero`].
    pub z: ParamId,
}

#[derive(Clone, Debug)]
pub struct RruCell {
    pub config: RruConfig,
    pub params: RruParams,
}

/// Rows rescaled to L2 norm `sqrt(cols)`; rows with norm below `eps` are divided by `eps`.
pub fn normalize<T: Real>(v: &Tensor<T>, eps: T) -> Tensor<T> {
    autodiff::normalize_rows(v, eps)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Pre-sigmoid residual weights `S` (`1 × n`).
///
/// `σ(S)` is uniform on `(0, 1)` for every variant except
/// [`RruVariant::SConstInit`], where it is the constant 0.95.
pub fn init_residual_weights<T: Real>(n: usize, variant: RruVariant, rng: &mut Rng) -> Result<Tensor<T>> {
    if variant == RruVariant::SConstInit {
        return Ok(Tensor::full(1, n, T::lit(logit(S_CONST_INIT))));
    }
    let values = (0..n)
        .map(|_| rng.uniform_range(S_GUARD, 1.0 - S_GUARD).map(|u| T::lit(logit(u))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::row_vector(values))
}

impl RruCell {
    pub fn init<T: Real>(config: RruConfig, store: &mut ParamStore<T>, prefix: &str, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (m, n, p, g) = (
            config.input_size,
            config.state_size,
            config.output_size,
            config.hidden_size(),
        );
        let wx = add_weight(store, rng, format!("{prefix}.wx"), m, g)?;
        let wh = add_weight(store, rng, format!("{prefix}.wh"), n, g)?;
        let bj = add_bias(store, format!("{prefix}.bj"), g);
        let mut wk = Vec::with_capacity(config.relu_layers);
        let mut bk = Vec::with_capacity(config.relu_layers);
        for i in 0..config.relu_layers {
            wk.push(add_weight(store, rng, format!("{prefix}.wk{i}"), g, g)?);
            bk.push(add_bias(store, format!("{prefix}.bk{i}"), g));
        }
        let wc = add_weight(store, rng, format!("{prefix}.wc"), g, n)?;
        let bc = add_bias(store, format!("{prefix}.bc"), n);
        let wo = add_weight(store, rng, format!("{prefix}.wo"), g, p)?;
        let bo = add_bias(store, format!("{prefix}.bo"), p);
        let s = match config.variant {
            RruVariant::SFixedOne => None,
            v => Some(store.add(format!("{prefix}.s"), init_residual_weights(n, v, rng)?)),
        };
        let z_width = if config.variant == RruVariant::ScalarRezero {
            1
        } else {
            n
        };
        let z = store.add(format!("{prefix}.z"), Tensor::zeros(1, z_width));
        Ok(Self {
            config,
            params: RruParams {
                wx,
                wh,
                bj,
                wk,
                bk,
                wc,
                bc,
                wo,
                bo,
                s,
                z,
            },
        })
    }

    /// `h₀`: zeros except feature 0, which is `sqrt(n) / 4`.
    pub fn initial_state<T: Real>(&self, batch: usize) -> Tensor<T> {
        let n = self.config.state_size;
        let mut h = Tensor::zeros(batch, n);
        let first = T::lit((n as f64).sqrt() / 4.0);
        for r in 0..batch {
            h.set(r, 0, first);
        }
        h
    }

    /// One timestep: returns `(o_t, h_t)`. `mask` is the `batch × g` dropout mask, if training.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        h: NodeId,
        mask: Option<Tensor<T>>,
    ) -> Result<(NodeId, NodeId)> {
        let cfg = &self.config;
        let p = &self.params;
        let batch = tape.shape(x)[0];
        if tape.shape(x) != [batch, cfg.input_size] || tape.shape(h) != [batch, cfg.state_size] {
            return Err(Error::shape("rru_step", tape.shape(x), tape.shape(h)));
        }

        let pre = super::affine2(tape, store, x, p.wx, h, p.wh, p.bj)?;
        let pre = if cfg.variant == RruVariant::NoNorm {
            pre
        } else {
            tape.normalize_rows(pre, T::lit(NORMALIZE_EPS))
        };
        let mut j = tape.relu(pre);
        for (&wk, &bk) in p.wk.iter().zip(&p.bk) {
            let (wk, bk) = (tape.param(store, wk), tape.param(store, bk));
            let lin = tape.matmul(j, wk)?;
            let lin = tape.add(lin, bk)?;
            j = tape.relu(lin);
        }
        let d = match mask {
            Some(m) => tape.mul_const(j, m)?,
            None => j,
        };

        let (wc, bc, wo, bo) = (
            tape.param(store, p.wc),
            tape.param(store, p.bc),
            tape.param(store, p.wo),
            tape.param(store, p.bo),
        );
        let c = tape.matmul(d, wc)?;
        let mut c = tape.add(c, bc)?;
        let o = tape.matmul(d, wo)?;
        let mut o = tape.add(o, bo)?;
        if cfg.variant == RruVariant::ReluOutput {
            c = tape.relu(c);
            o = tape.relu(o);
        }

        let z = tape.param(store, p.z);
        let z = if cfg.variant == RruVariant::ScalarRezero {
            tape.broadcast(z, cfg.state_size)?
        } else {
            z
        };
        let update = tape.mul(c, z)?;
        let carried = match p.s {
            Some(s) => {
                let s = tape.param(store, s);
                let gate = tape.sigmoid(s);
                tape.mul(h, gate)?
            }
            None => h,
        };
        let h_next = tape.add(carried, update)?;
        Ok((o, h_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Cell, CellConfig};
    use crate::tensor::sigmoid;

    fn config(variant: RruVariant) -> RruConfig {
        RruConfig {
            input_size: 5,
            state_size: 6,
            output_size: 4,
            middle_multiplier: 1.5,
            relu_layers: 1,
            dropout_rate: 0.0,
            variant,
        }
    }

    #[test]
    fn initial_state_first_feature() {
        let mut store = ParamStore::<f64>::new();
        let mut cfg = config(RruVariant::Standard);
        cfg.state_size = 64;
        let cell = RruCell::init(cfg, &mut store, "r", &mut Rng::new(0)).unwrap();
        let h0: Tensor<f64> = cell.initial_state(3);
        for r in 0..3 {
            assert_eq!(h0.get(r, 0), 2.0);
            assert!(h0.row(r)[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn normalize_examples() {
        let v = Tensor::<f64>::row_vector(vec![3.0, 4.0]);
        let out = normalize(&v, NORMALIZE_EPS);
        assert!((out.get(0, 0) - 0.848_528_137_4).abs() < 1e-9);
        assert!((out.get(0, 1) - 1.131_370_849_9).abs() < 1e-9);
        let zero = normalize(&Tensor::<f64>::zeros(2, 5), NORMALIZE_EPS);
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_cell_only_decays_state() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(4);
        let cell = RruCell::init(config(RruVariant::Standard), &mut store, "r", &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(rng.uniform_tensor(-1.0, 1.0, 2, 5).unwrap());
        let h_prev = rng.uniform_tensor(-1.0, 1.0, 2, 6).unwrap();
        let h = tape.constant(h_prev.clone());
        let (_, h_next) = cell.step(&mut tape, &store, x, h, None).unwrap();
        let s = store.value(cell.params.s.unwrap());
        for r in 0..2 {
            for c in 0..6 {
                assert_eq!(tape.value(h_next).get(r, c), sigmoid(s.get(0, c)) * h_prev.get(r, c));
            }
        }
    }

    #[test]
    fn const_init_variant_sets_sigmoid_to_095() {
        let s: Tensor<f64> = init_residual_weights(100, RruVariant::SConstInit, &mut Rng::new(0)).unwrap();
        assert!(s.data().iter().all(|&v| (sigmoid(v) - 0.95).abs() < 1e-12));
    }

    #[test]
    fn rezero_scales_start_at_zero() {
        for variant in RruVariant::ALL {
            let mut store = ParamStore::<f64>::new();
            let cell = RruCell::init(config(variant), &mut store, "r", &mut Rng::new(1)).unwrap();
            assert!(store.value(cell.params.z).data().iter().all(|&v| v == 0.0));
            assert_eq!(cell.params.s.is_none(), variant == RruVariant::SFixedOne);
        }
    }

    #[test]
    fn step_rejects_wrong_input_width() {
        let mut store = ParamStore::<f64>::new();
        let cell = Cell::init(
            &CellConfig::Rru(config(RruVariant::Standard)),
            &mut store,
            "r",
            &mut Rng::new(0),
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 3));
        let state = crate::cells::StateNodes::from_values(&mut tape, &cell.initial_state(2));
        assert!(cell.step(&mut tape, &store, x, state, None).is_err());
    }
}
