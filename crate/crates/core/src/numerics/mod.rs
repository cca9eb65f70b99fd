//! Minimal dense-tensor engine with reverse-mode differentiation.

mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use params::ParamStore;
pub use tape::{Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("optimizer state mismatch: {0}")]
    Optimizer(String),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
