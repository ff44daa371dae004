//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::AdamState;
pub(crate) use graph::softmax_rows;
pub use graph::{Gradients, Graph, Var};
pub use params::{
    Checkpoint, CheckpointMeta, NamedTensor, ParamId, ParamStore, Parameter, CHECKPOINT_FORMAT,
};
pub use tensor::Tensor;
