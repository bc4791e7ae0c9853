//! Recursive multi-scale depthwise convolution and the blocks around it,
//! with exact parameter/MAC accounting, receptive-field measurement, and
//! finite-difference gradient verification.
//!
//! The numeric core is generic over the scalar via `num_traits::Float`;
//! every type defaults to `f64`, which is the precision the gradient and
//! determinism contracts are stated in.

pub mod analysis;
pub mod error;
pub mod model;
pub mod ops;
pub mod rec;
pub mod rng;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use ops::{
    channel_affine, channel_affine_vjp, conv2d, conv2d_vjp, gelu, gelu_vjp, resize, resize_vjp,
    transposed_dwconv, transposed_dwconv_vjp, AffineVjp, ConvKernel, ConvVjp, ResizeMode,
    ResizeSpec,
};
pub use rec::{
    recconv_forward, recconv_param_count, recconv_vjp, Aggregation, AggregationGrads,
    AggregationKernels, RecConvConfig, RecConvGrads, RecConvTrace, RecConvWeights, UpsampleMode,
};
pub use rng::SplitMix64;
pub use tensor::{Shape2, Tensor4};
