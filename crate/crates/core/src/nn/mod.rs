//! Convolution, normalization, activation, pooling and loss primitives with
//! their vector-Jacobian products.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{gelu, gelu_vjp, normal_cdf, sigmoid, sigmoid_vjp};
pub use conv::{conv2d, conv2d_vjp, same_padding, ConvGrads, ConvSpec, ConvWeights};
pub use gradcheck::{
    finite_diff_check, relative_error, DifferentiableOp, GradCheckConfig, GradCheckReport,
};
pub use linear::{linear, linear_vjp, Linear, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_vjp};
pub use norm::{batch_norm_infer, batch_norm_vjp, BatchNorm, BatchNormGrads};
pub use pool::{global_avg_pool, global_avg_pool_vjp};
