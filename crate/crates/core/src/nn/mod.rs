//! Minimal neural-network substrate: tensors on an operation tape,
//! dense/convolution/LSTM layers, Adam with global-norm clipping.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

use thiserror::Error;

pub use gradcheck::{check_gradients, relative_error, GradCheckConfig, GradCheckReport};
pub use init::{init_params, InitKind, ParamSpec};
pub use layers::{conv2d_forward, fc_forward, lstm_step, Activation, Conv2d, Dense, Lstm, LstmCellState, LstmVars};
pub use optim::{adam_step, clip_global_norm, AdamConfig};
pub use params::{Param, ParamStore};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch for {param}: expected {expected:?}, found {found:?}")]
    Dimension {
        param: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("layer configuration: {0}")]
    Config(String),
    #[error("tape state: {0}")]
    State(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
