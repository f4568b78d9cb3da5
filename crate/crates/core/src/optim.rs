//! RAdam with global-norm gradient clipping, and early stopping.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Scales all gradients by `clip_norm / ‖g‖` when the global L2 norm exceeds
/// `clip_norm`. Returns the factor applied (1.0 when untouched).
pub fn clip_global_norm<T: Real>(store: &mut ParamStore<T>, clip_norm: f64) -> f64 {
    let norm = global_grad_norm(store);
    if norm > clip_norm && norm.is_finite() {
        let scale = clip_norm / norm;
        for p in store.iter_mut() {
            p.grad.scale_in_place(T::lit(scale));
        }
        scale
    } else {
        1.0
    }
}

pub fn global_grad_norm<T: Real>(store: &ParamStore<T>) -> f64 {
    store
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl RAdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Maximum length of the approximated simple moving average, `2 / (1 − β₂) − 1`.
pub fn rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

/// `ρ_t = ρ_∞ − 2 t β₂ᵗ / (1 − β₂ᵗ)`.
pub fn rho(t: u64, beta2: f64) -> f64 {
    let bt = beta2.powi(t as i32);
    rho_inf(beta2) - 2.0 * t as f64 * bt / (1.0 - bt)
}

/// Which update a step used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    /// Variance-rectified adaptive step (`ρ_t > 4`).
    Rectified,
    /// Bias-corrected momentum only.
    Momentum,
}

#[derive(Clone, Debug)]
pub struct RAdam<T> {
    pub config: RAdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> RAdam<T> {
    pub fn new(config: RAdamConfig, store: &ParamStore<T>) -> Result<Self> {
        if config.learning_rate.is_nan()
            || config.learning_rate <= 0.0
            || !(0.0..1.0).contains(&config.beta1)
            || !(0.0..1.0).contains(&config.beta2)
        {
            return Err(Error::InvalidArgument(format!("invalid RAdam settings {config:?}")));
        }
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Ok(Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<UpdateKind> {
        if store.len() != self.first.len() {
            return Err(Error::InvalidArgument(
                "optimizer built for a different parameter set".into(),
            ));
        }
        self.step += 1;
        let t = self.step;
        let RAdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let rho_inf = rho_inf(b2);
        let rho_t = rho(t, b2);
        let kind = if rho_t > 4.0 {
            UpdateKind::Rectified
        } else {
            UpdateKind::Momentum
        };
        let rect = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();

        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let (one_b1, one_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        let momentum_lr = T::lit(lr / bias1);
        let rect_lr = T::lit(lr * rect / bias1);
        let sqrt_bias2 = T::lit(bias2.sqrt());
        let eps = T::lit(eps);

        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let w = p.value.data_mut();
            let g = p.grad.data();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1t * *m + one_b1 * g;
                *v = b2t * *v + one_b2 * g * g;
                match kind {
                    // lr·r·m̂ / (sqrt(v / bias2) + ε)
                    UpdateKind::Rectified => *w -= rect_lr * *m / (v.sqrt() / sqrt_bias2 + eps),
                    UpdateKind::Momentum => *w -= momentum_lr * *m,
                }
            }
        }
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    Min,
    Max,
}

/// Stops once the tracked metric has not improved for more than `patience` epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub patience: usize,
    pub mode: StopMode,
    best: Option<f64>,
    best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, mode: StopMode) -> Self {
        Self {
            patience,
            mode,
            best: None,
            best_epoch: 0,
        }
    }

    /// Records an epoch's metric; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if !metric.is_finite() {
            return false;
        }
        let better = match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), StopMode::Min) => metric < b,
            (Some(b), StopMode::Max) => metric > b,
        };
        if better {
            self.best = Some(metric);
            self.best_epoch = epoch;
        }
        better
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch.saturating_sub(self.best_epoch) > self.patience
    }
}
