//! Forward kernels of the differentiable operation set, usable directly on
//! tensors. The [`Tape`](crate::Tape) records the same kernels together with
//! their gradients.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod filter;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod sample;

pub use activation::{pointwise, sigmoid_scalar, softmax_channel, Pointwise};
pub use conv::{conv2d, Conv2dSpec};
pub use filter::local_filter;
pub use elementwise::{broadcast_mul, concat_channel, slice_channels, GateKind};
pub use loss::{balanced_cross_entropy, bce_with_logits, softplus, BalancedCe};
pub use norm::{batchnorm, BnStats, BN_EPS, BN_MOMENTUM};
pub use pool::{global_pool_channel, global_pool_spatial, PoolMode};
pub use sample::{aligned_upsample, bilinear_upsample, grid_sample_bilinear, source_coord};
