//! Minimal reverse-mode differentiation for small dense models.

mod graph;
mod model;

pub use graph::{Graph, NodeId};
pub use model::{
    accuracy, forward_loss, grad, hvp, loss_and_grad, pack_params, predict, unpack_params, Activation, Batch, Head,
    LayerParams, ModelSpec, ModelState,
};
