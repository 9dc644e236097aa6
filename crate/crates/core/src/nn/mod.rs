//! Minimal differentiable operator set with hand-written backward passes.
//!
//! Convolutions use the cross-correlation convention. Every op is a pure
//! function of its inputs; the layer structs in [`layers`] add parameter
//! ownership, gradient accumulation and forward caches on top.

mod adam;
pub mod checkpoint;
mod conv;
pub(crate) mod gemm;
pub mod layers;
mod loss;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{
    conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, conv_output_size,
    conv_transpose_output_size, ConvGrads,
};
pub use layers::{
    ActivationLayer, BatchNorm2dLayer, Conv2dLayer, ConvTranspose2dLayer, DenseLayer, Init, MaxPoolLayer,
};
pub use loss::{bce, bce_with_logits, softmax, softmax_crossentropy, PROB_EPS};
pub use ops::{
    batchnorm2d, batchnorm2d_backward, dense, dense_backward, dropout, dropout_backward, leaky_relu,
    maxpool2d, maxpool2d_backward, relu, sigmoid, Activation, BatchNormCache, BatchNormGrads, BatchStats,
    DenseGrads, Mode, BN_EPS,
};
pub use tensor::{Matrix, Tensor4};

/// A trainable tensor viewed together with its gradient buffer.
pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// A named read-only tensor, as written to checkpoints.
#[derive(Clone, Debug)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> NamedTensor<'a> {
    pub fn new(name: String, shape: Vec<usize>, data: &'a [f64]) -> Self {
        Self { name, shape, data }
    }
}
