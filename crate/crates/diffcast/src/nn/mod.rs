//! Minimal differentiable tensor substrate: dense `f64` tensors, a
//! per-step reverse-mode tape, Adam, and bit-exact parameter checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod tensor;

pub use adam::{AdamError, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::{Tensor, TensorError};
