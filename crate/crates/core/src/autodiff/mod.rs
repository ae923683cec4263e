//! Differentiation engine and neural velocity fields.
//!
//! Parameter gradients come from a reverse-mode [`Tape`]. Spatial Jacobians
//! come from forward-mode jets recorded on that same tape, so penalties on
//! `∇ₓv` stay differentiable with respect to the parameters.

pub mod checkpoint;
pub mod gradcheck;
mod jet;
mod mlp;
mod model;
mod tape;

pub use jet::{mlp_jet, Jet};
pub use mlp::{mlp_eval, mlp_init, stack_input, Architecture, MlpParams, ParamNodes};
pub use model::{mlp_jacobian, potential_velocity, FlowModel, ModelKind, Tangent};
pub use tape::{silu_nth, Gradients, NodeId, Tape};

/// Reverse-mode gradient of a scalar loss node with respect to `params`,
/// in the flat parameter layout.
pub fn grad_params(
    tape: &Tape,
    loss: NodeId,
    params: &MlpParams,
    nodes: &ParamNodes,
) -> crate::Result<Vec<f64>> {
    let grads = tape.backward(loss)?;
    Ok(params.flat_gradient(&grads, nodes))
}
