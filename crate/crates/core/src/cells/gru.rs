use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::cells::{add_bias, add_weight, affine2, BaselineConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
/// h' = z ⊙ h + (1 − z) ⊙ h̃
/// ```
///
/// Recurrent dropout multiplies the candidate `h̃`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub config: BaselineConfig,
    /// `[w, u, b]` for the update gate, reset gate and candidate.
    pub update: [ParamId; 3],
    pub reset: [ParamId; 3],
    pub candidate: [ParamId; 3],
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

impl GruCell {
    pub fn init<T: Real>(
        config: BaselineConfig,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (m, n) = (config.input_size, config.state_size);
        let update = gate_params(store, rng, prefix, "z", m, n)?;
        let reset = gate_params(store, rng, prefix, "r", m, n)?;
        let candidate = gate_params(store, rng, prefix, "h", m, n)?;
        Ok(Self {
            config,
            update,
            reset,
            candidate,
        })
    }

    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        h: NodeId,
        mask: Option<Tensor<T>>,
    ) -> Result<NodeId> {
        let batch = tape.shape(x)[0];
        if tape.shape(x) != [batch, self.config.input_size] || tape.shape(h) != [batch, self.config.state_size] {
            return Err(Error::shape("gru_step", tape.shape(x), tape.shape(h)));
        }
        let [wz, uz, bz] = self.update;
        let [wr, ur, br] = self.reset;
        let [wh, uh, bh] = self.candidate;

        let z = affine2(tape, store, x, wz, h, uz, bz)?;
        let z = tape.sigmoid(z);
        let r = affine2(tape, store, x, wr, h, ur, br)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let cand = affine2(tape, store, x, wh, rh, uh, bh)?;
        let mut cand = tape.tanh(cand);
        if let Some(m) = mask {
            cand = tape.mul_const(cand, m)?;
        }
        let keep = tape.mul(z, h)?;
        let one_minus_z = tape.affine(z, -T::one(), T::one());
        let fresh = tape.mul(one_minus_z, cand)?;
        tape.add(keep, fresh)
    }
}
