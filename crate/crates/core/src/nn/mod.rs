//! Deterministic tensor layers with forward and gradient implementations.
//!
//! Layouts are row-major with time as the leading axis: front-end tensors
//! are `time × freq × channel`, sequence tensors `time × channel`. All
//! arithmetic is `f64`.

mod activation;
mod conv1d;
mod conv2d;
mod gemm;
pub mod gradcheck;
mod pool;
mod tensor;

pub use activation::{
    activation, activation_backward, bce_grad, bce_logit_grad, bce_loss, dropout, dropout_mask,
    elu, sigmoid, ActivationKind,
};
pub(crate) use activation::apply_mask;
pub use conv1d::{dense, dense_backward, dilated_conv1d, dilated_conv1d_backward};
pub use conv2d::{conv2d_valid, conv2d_valid_backward};
pub use pool::{maxpool_freq3, maxpool_freq3_backward};
pub use tensor::Tensor;

/// Gradients produced by a layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    /// One tensor per parameter, in the layer's parameter order.
    pub param_grads: Vec<Tensor>,
    /// Gradient with respect to the layer input; `None` when not requested.
    pub input_grad: Option<Tensor>,
}
