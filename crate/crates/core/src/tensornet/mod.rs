//! Minimal neural-network core: dense tensors, a fixed layer set with
//! hand-written backward passes, softmax cross-entropy (optionally class
//! weighted), Adam, mini-batch training, finite-difference gradient checks
//! and the `WSNET1` checkpoint format.
//!
//! Everything is `f64`.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod loss;
mod tensor;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, FD_STEP};
pub use graph::{Mode, ModelGraph};
pub use layers::{LayerSpec, Param};
pub use loss::{
    class_weights, cross_entropy, softmax, softmax_cross_entropy, ClassWeights, PROB_FLOOR,
};
pub use tensor::Tensor;
pub use train::{argmax_rows, fit, EpochStats, FitOptions};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
