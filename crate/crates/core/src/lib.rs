//! Residual Recurrent Unit laboratory.
//!
//! A small, dependency-light stack for training recurrent sequence models on
//! the CPU: a dense 2-D tensor kernel, a define-by-run reverse-mode tape, the
//! gateless RRU cell together with GRU / LSTM / Mogrifier LSTM baselines,
//! RAdam with global-norm clipping, and loaders for piano-roll music,
//! character / word text, MNIST and synthetic diagnostic tasks.

pub mod autodiff;
pub mod cells;
pub mod check;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use autodiff::{grad_check, GradCheckReport, Gradients, NodeId, ParamId, ParamStore, Parameter, Tape};
pub use cells::{BaselineConfig, BaselineKind, CellConfig, CellState, RruConfig, RruVariant};
pub use error::{Error, Result};
pub use model::{
    BatchInputs, BatchTargets, EvalSums, InputSpec, Mode, Model, ModelConfig, Network, Readout, SequenceBatch, Task,
};
pub use optim::{clip_global_norm, EarlyStopper, RAdam, RAdamConfig, StopMode};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
