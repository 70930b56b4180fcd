//! Small dense-network stack for Q-value estimation.
//!
//! Everything runs in `f64`. Networks are a stack of ReLU hidden layers
//! followed by either a linear head or a dueling value/advantage head; any
//! layer after the first hidden layer may be a factorised-Gaussian noisy layer.

mod adam;
mod io;
mod layer;
mod loss;
mod network;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use io::{load_weights, save_weights, WEIGHTS_FORMAT};
pub use layer::{Activation, DenseLayer, Layer, NoisyDenseLayer};
pub use loss::{huber_loss, huber_loss_weighted};
pub use network::{copy_parameters, Gradients, Head, NetworkArch, QNetwork};
pub use tensor::Tensor2D;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("backward called without a cached forward pass")]
    NoCachedForward,
    #[error("network has no noisy layers")]
    NotNoisy,
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("weight file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed weight file {path}: {message}")]
    Format { path: String, message: String },
}

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> NeuralError {
    NeuralError::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
