use rand::Rng;

use super::param::{he_init, Param, ParamRole};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = W·x + b` with `W` stored as `out × in`.
///
/// Inputs are `B × ...`; everything after the batch axis is treated as the
/// feature vector.
#[derive(Clone, Debug)]
pub struct Dense<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(he_init(&[outputs, inputs], inputs, rng), ParamRole::Weight),
            bias: Param::zeros(&[outputs], ParamRole::Bias),
            cached_input: None,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "dense weight {:?} / bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, ParamRole::Weight),
            bias: Param::new(bias, ParamRole::Bias),
            cached_input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// Applies the layer to a single feature vector.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.inputs() {
            return Err(Error::shape(format!(
                "dense expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let mut y = self.bias.value.data().to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight.value.data()[o * x.len()..(o + 1) * x.len()];
            *yo += row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>();
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let b = *x.shape().first().ok_or_else(|| Error::shape("dense input has no batch axis"))?;
        let d = x.len() / b.max(1);
        if d != self.inputs() {
            return Err(Error::shape(format!(
                "dense expects {} features per item, got {d}",
                self.inputs()
            )));
        }
        let o = self.outputs();
        let mut y = Tensor::zeros(&[b, o]);
        for row in y.data_mut().chunks_mut(o) {
            row.copy_from_slice(self.bias.value.data());
        }
        // Y (B×O) += X (B×D) · Wᵀ (D×O)
        T::gemm(
            b,
            d,
            o,
            T::one(),
            x.data(),
            d as isize,
            1,
            self.weight.value.data(),
            1,
            d as isize,
            T::one(),
            y.data_mut(),
            o as isize,
            1,
        );
        self.cached_input = cache.then_some(x);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self
            .cached_input
            .take()
            .expect("dense backward without a cached forward pass");
        let (b, d, o) = (x.shape()[0], self.inputs(), self.outputs());
        // dW (O×D) += dYᵀ (O×B) · X (B×D)
        T::gemm(
            o,
            b,
            d,
            T::one(),
            dy.data(),
            1,
            o as isize,
            x.data(),
            d as isize,
            1,
            T::one(),
            self.weight.grad.data_mut(),
            d as isize,
            1,
        );
        for row in dy.data().chunks(o) {
            for (g, &v) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        need_input_grad.then(|| {
            // dX (B×D) = dY (B×O) · W (O×D)
            let mut dx = Tensor::zeros(x.shape());
            T::gemm(
                b,
                o,
                d,
                T::one(),
                dy.data(),
                o as isize,
                1,
                self.weight.value.data(),
                d as isize,
                1,
                T::zero(),
                dx.data_mut(),
                d as isize,
                1,
            );
            dx
        })
    }
}
