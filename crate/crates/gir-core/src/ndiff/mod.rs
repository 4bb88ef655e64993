//! Minimal dense numeric core: tensors, a recorded computation graph with
//! reverse-mode gradients, common losses, and Adam.
//!
//! Everything is f64 and row-major. The graphs trained in this crate are a
//! few thousand nodes at most, so dense kernels are deliberate.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdiffError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("optimizer state does not match parameters ({detail})")]
    OptimizerMismatch { detail: String },
    #[error("checkpoint version {0} not supported")]
    CheckpointVersion(u32),
    #[error("checkpoint tensor {name}: {detail}")]
    CheckpointTensor { name: String, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
