//! Numeric substrate for the temporal models: layer primitives with explicit
//! backward passes, parameter containers, optimizers, finite-difference
//! checking and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;

pub use checkpoint::Checkpoint;
pub use ops::{
    channel_max_normalize, conv1d_forward, cross_entropy_loss, maxpool2, softmax_dense, upsample2,
    NormGrad, Padding,
};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{ParamSet, Tensor};
