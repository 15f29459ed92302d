//! Differentiable layers shared by the steering architectures.

pub mod batchnorm;
pub mod conv;
pub mod lstm;
pub mod pool;

pub use batchnorm::{
    batch_norm_infer, batch_norm_train, spatial_batchnorm, BatchNormParams, BatchStats, BnMode, RunningStats,
};
pub use conv::{conv, conv2d, conv3d, output_extent, ConvSpec};
pub use lstm::{lstm_layer, lstm_sequence, lstm_step, LstmParams, LstmWeights};
pub use pool::{global_avg_pool, max_pool};

use crate::autodiff::{ops, Graph, NodeId};
use crate::error::{Error, Result};

/// `x·W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense(g: &mut Graph, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    let m = ops::matmul(g, x, weight)?;
    ops::add_bias(g, m, bias)
}

/// `inner(x) + shortcut(x)`, where the shortcut is `projection(x)` when
/// given and the identity otherwise.
///
/// This is the usual additive-shortcut formulation, so with a zero inner
/// stack the block is an exact identity and the gradient reaching `x`
/// through the shortcut is exactly the incoming gradient.
pub fn residual_block<I, P>(g: &mut Graph, x: NodeId, inner: I, projection: Option<P>) -> Result<NodeId>
where
    I: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
    P: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    let body = inner(g, x)?;
    let shortcut = match projection {
        Some(p) => p(g, x)?,
        None => x,
    };
    if g.value(body).shape() != g.value(shortcut).shape() {
        return Err(Error::ShapeMismatch {
            op: "residual_block",
            left: g.value(body).shape().to_vec(),
            right: g.value(shortcut).shape().to_vec(),
        });
    }
    ops::add(g, body, shortcut)
}

/// Residual block without a projection.
pub fn identity_residual<I>(g: &mut Graph, x: NodeId, inner: I) -> Result<NodeId>
where
    I: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    residual_block::<I, fn(&mut Graph, NodeId) -> Result<NodeId>>(g, x, inner, None)
}
