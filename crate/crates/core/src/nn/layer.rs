use rand::Rng;

use super::activation::{Dropout, Elu};
use super::batchnorm::BatchNorm;
use super::conv::Conv2d;
use super::dense::Dense;
use super::param::Param;
use super::pool::{MaxPool, MaxPoolLayer};
use super::tensor::{Real, Tensor};
use super::Mode;
use crate::arch::LayerSpec;
use crate::error::{Error, Result};

/// One stage of a branch or the trunk.
#[derive(Clone, Debug)]
pub enum Layer<T: Real> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Elu(Elu<T>),
    MaxPool(MaxPoolLayer),
    Dropout(Dropout<T>),
    /// Remembers the input shape for backward.
    Flatten(Vec<usize>),
    Dense(Dense<T>),
}

impl<T: Real> Layer<T> {
    /// Instantiates `spec` for per-item inputs of shape `input`.
    pub fn build<R: Rng + ?Sized>(spec: &LayerSpec, input: &[usize], rng: &mut R) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv {
                n_filters,
                filter_m,
                filter_n,
                padding,
            } => {
                let c = *input
                    .first()
                    .filter(|_| input.len() == 3)
                    .ok_or_else(|| Error::shape(format!("conv input {input:?} is not C×M×N")))?;
                Layer::Conv(Conv2d::new(c, n_filters, filter_m, filter_n, padding, rng))
            }
            LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(input[0])),
            LayerSpec::Elu => Layer::Elu(Elu::new()),
            LayerSpec::MaxPool { pool_m, pool_n } => {
                Layer::MaxPool(MaxPoolLayer::new(MaxPool::new(pool_m, pool_n)))
            }
            LayerSpec::Dropout { p } => Layer::Dropout(Dropout::new(p)?),
            LayerSpec::Flatten => Layer::Flatten(Vec::new()),
            LayerSpec::Dense { units } => Layer::Dense(Dense::new(input.iter().product(), units, rng)),
        })
    }

    /// Short tag used in parameter names.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Elu(_) => "elu",
            Layer::MaxPool(_) => "pool",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::BatchNorm(_) | Layer::Dense(_))
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let cache = mode == Mode::Train;
        match self {
            Layer::Conv(l) => l.forward(x, cache),
            Layer::BatchNorm(l) => l.forward(&x, mode, cache),
            Layer::Elu(l) => Ok(l.forward(&x, cache)),
            Layer::MaxPool(l) => l.forward(&x, cache),
            Layer::Dropout(l) => l.forward(&x, mode, rng, cache),
            Layer::Flatten(shape) => {
                let b = x.shape()[0];
                let d = x.len() / b.max(1);
                if cache {
                    *shape = x.shape().to_vec();
                }
                x.reshape(&[b, d])
            }
            Layer::Dense(l) => l.forward(x, cache),
        }
    }

    /// Backpropagates `grad`, accumulating parameter gradients. Returns the
    /// input gradient unless `need_input_grad` is false and the layer can skip it.
    pub fn backward(&mut self, grad: Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(&grad, need_input_grad),
            Layer::BatchNorm(l) => Some(l.backward(&grad)),
            Layer::Elu(l) => Some(l.backward(&grad)),
            Layer::MaxPool(l) => Some(l.backward(&grad)),
            Layer::Dropout(l) => Some(l.backward(&grad)),
            Layer::Flatten(shape) => Some(grad.reshape(shape).expect("flatten preserves size")),
            Layer::Dense(l) => l.backward(&grad, need_input_grad),
        }
    }

    /// Parameter tensors with their short names, in serialization order.
    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![
                ("gamma", &l.gamma),
                ("beta", &l.beta),
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![
                ("gamma", &mut l.gamma),
                ("beta", &mut l.beta),
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }
}
