//! Standard LSTM and five gate-reduced variants, trained from scratch.
//!
//! The variants keep the LSTM candidate path and cell update intact and strip
//! adaptive terms out of the three gates:
//!
//! * `LSTM1`: gates see only `U h_prev + b`
//! * `LSTM2`: gates see only `U h_prev`
//! * `LSTM3`: gates are a learned bias alone
//! * `LSTM4`: gates see `u ⊙ h_prev`
//! * `LSTM5`: gates see `u ⊙ h_prev + b`
//!
//! The crate covers the forward pass ([`cells`]), exact gradients ([`bptt`]),
//! RMSprop training on row-sequential MNIST ([`trainer`], [`mnist`]) and the
//! runners behind the `slstm` binary ([`cli`]). See the `examples/` directory
//! for one runnable program per capability.

pub mod bptt;
pub mod cells;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod mnist;
pub mod numkit;
pub mod params;
pub mod snapshot;
pub mod trainer;
pub mod wide;

pub use cells::{
    forward_sequence, param_count, step, CellParams, CellState, GateParams, StepCache, Variant,
};
pub use error::{Error, Result};
pub use numkit::{ActivationKind, Matrix, Vector};
pub use params::ParamSet;
pub use trainer::{MetricsLog, Model, TrainConfig, Trainer};
