//! Minimal deterministic CNN engine: tensors, the layer set used by the
//! architecture zoo, losses, SGD, and a finite-difference gradient checker.
//!
//! Activations are `B×C×M×N` (batch, channels, mel bins, frames). Everything
//! is generic over [`Real`] so the same code runs in `f32` for training and
//! `f64` for gradient checks.

mod activation;
mod batchnorm;
mod conv;
mod dense;
#[cfg(test)]
mod invariance;
pub mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;
mod param;
mod pool;
pub mod rng;
mod tensor;

pub use activation::{dropout, elu, Dropout, Elu};
pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use conv::{Conv2d, ConvGeometry, ConvGradients, Padding};
pub use dense::Dense;
pub use gradcheck::{gradcheck, gradcheck_arch, GradcheckOptions, GradcheckReport, LayerReport};
pub use layer::Layer;
pub use loss::{sigmoid, sigmoid_bce, softmax, softmax_xent, OutputKind};
pub use network::Network;
pub use optim::{sgd_step, SgdConfig};
pub use param::{he_init, Param, ParamRole};
pub use pool::{maxpool, Extent, MaxPool, MaxPoolLayer, PoolGeometry};
pub use rng::{rng_from_seed, EngineRng, RngStreams};
pub use tensor::{matmul, Real, Tensor};

/// Training uses batch statistics and dropout; inference uses running
/// statistics and no dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
