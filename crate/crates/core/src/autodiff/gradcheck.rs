use std::fmt;

use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Comparison of analytic and central-difference gradients for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_diff: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<6} {:<24} max_rel={:.3e} max_abs={:.3e} worst=[{}]",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.max_rel_error,
                p.max_abs_diff,
                p.worst_index
            )?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the tape's gradients of `build` against central finite differences
/// with step `eps`, element by element over every parameter in `store`.
///
/// `build` must be a deterministic function of the parameter values: any
/// dropout masks have to be sampled once outside and reused.
pub fn grad_check<F>(store: &mut ParamStore<f64>, eps: f64, tol: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        tape.value(loss).check_finite("loss")?;
        tape.backward(loss, store)?;
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut eval = |store: &ParamStore<f64>, location: &dyn Fn() -> String| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let v = tape.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { location: location() });
        }
        Ok(v)
    };

    let mut params = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let name = store.get(id).name.clone();
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            max_abs_diff: 0.0,
            worst_index: 0,
            passed: true,
        };
        for (k, &a) in analytic[pi].iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("analytic grad {name}[{k}]"),
                });
            }
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(store, &|| format!("{name}[{k}] + eps"));
            store.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(store, &|| format!("{name}[{k}] - eps"));
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);

            let rel = relative_error(a, numeric);
            check.max_abs_diff = check.max_abs_diff.max((a - numeric).abs());
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = k;
            }
        }
        check.passed = check.max_rel_error < tol;
        params.push(check);
    }
    Ok(GradCheckReport { eps, tol, params })
}
