use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::cells::{add_bias, add_weight, affine2, BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// LSTM with an optional Mogrifier front end.
///
/// ```text
/// i = σ(x·Wi + h·Ui + bi)        f = σ(x·Wf + h·Uf + bf + forget_bias)
/// o = σ(x·Wo + h·Uo + bo)        g = tanh(x·Wg + h·Ug + bg)
/// c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
/// ```
///
/// Recurrent dropout multiplies `g`. With `mog_rounds > 0`, `x` and `h` are
/// first modulated by [`LstmCell::mogrify`].
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub config: BaselineConfig,
    pub input_gate: [ParamId; 3],
    pub forget_gate: [ParamId; 3],
    pub output_gate: [ParamId; 3],
    pub candidate: [ParamId; 3],
    /// Low-rank factor pairs, one per modulation round.
    pub mog_factors: Vec<(ParamId, ParamId)>,
}

fn gate_params<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut Rng,
    prefix: &str,
    gate: &str,
    m: usize,
    n: usize,
) -> Result<[ParamId; 3]> {
    Ok([
        add_weight(store, rng, format!("{prefix}.w{gate}"), m, n)?,
        add_weight(store, rng, format!("{prefix}.u{gate}"), n, n)?,
        add_bias(store, format!("{prefix}.b{gate}"), n),
    ])
}

impl LstmCell {
    pub fn init<T: Real>(
        config: BaselineConfig,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (m, n) = (config.input_size, config.state_size);
        let input_gate = gate_params(store, rng, prefix, "i", m, n)?;
        let forget_gate = gate_params(store, rng, prefix, "f", m, n)?;
        let output_gate = gate_params(store, rng, prefix, "o", m, n)?;
        let candidate = gate_params(store, rng, prefix, "g", m, n)?;
        let mut mog_factors = Vec::new();
        if config.kind == BaselineKind::MogrifierLstm {
            let k = config.mog_rank;
            for round in 1..=config.mog_rounds {
                // odd rounds map h → x-sized masks, even rounds x → h-sized masks
                let (from, to) = if round % 2 == 1 { (n, m) } else { (m, n) };
                let left = add_weight(store, rng, format!("{prefix}.mog{round}_left"), from, k)?;
                let right = add_weight(store, rng, format!("{prefix}.mog{round}_right"), k, to)?;
                mog_factors.push((left, right));
            }
        }
        Ok(Self {
            config,
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            mog_factors,
        })
    }

    /// Alternating modulation: odd rounds `x ← 2σ(h·Q)⊙x`, even rounds
    /// `h ← 2σ(x·R)⊙h`, with `Q`, `R` factored as rank-k products.
    pub fn mogrify<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: NodeId,
        mut h: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        for (round, &(left, right)) in self.mog_factors.iter().enumerate() {
            let (left, right) = (tape.param(store, left), tape.param(store, right));
            let src = if round % 2 == 0 { h } else { x };
            let low = tape.matmul(src, left)?;
            let pre = tape.matmul(low, right)?;
            let gate = tape.sigmoid(pre);
            let gate = tape.scale(gate, T::lit(2.0));
            if round % 2 == 0 {
                x = tape.mul(gate, x)?;
            } else {
                h = tape.mul(gate, h)?;
            }
        }
        Ok((x, h))
    }

    /// One timestep: returns `(h_t, c_t)`.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        (h, c): (NodeId, NodeId),
        mask: Option<Tensor<T>>,
    ) -> Result<(NodeId, NodeId)> {
        let batch = tape.shape(x)[0];
        let n = self.config.state_size;
        if tape.shape(x) != [batch, self.config.input_size]
            || tape.shape(h) != [batch, n]
            || tape.shape(c) != [batch, n]
        {
            return Err(Error::shape("lstm_step", tape.shape(x), tape.shape(h)));
        }
        let (x, h) = self.mogrify(tape, store, x, h)?;

        let gate = |tape: &mut Tape<T>, [w, u, b]: [ParamId; 3]| affine2(tape, store, x, w, h, u, b);
        let i = gate(tape, self.input_gate)?;
        let i = tape.sigmoid(i);
        let f = gate(tape, self.forget_gate)?;
        let f = tape.affine(f, T::one(), T::lit(self.config.forget_bias));
        let f = tape.sigmoid(f);
        let o = gate(tape, self.output_gate)?;
        let o = tape.sigmoid(o);
        let g = gate(tape, self.candidate)?;
        let mut g = tape.tanh(g);
        if let Some(m) = mask {
            g = tape.mul_const(g, m)?;
        }

        let kept = tape.mul(f, c)?;
        let written = tape.mul(i, g)?;
        let c_next = tape.add(kept, written)?;
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
