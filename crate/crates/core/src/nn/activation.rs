use rand::Rng;

use super::tensor::{Real, Tensor};
use super::Mode;
use crate::error::{Error, Result};

/// `x` for `x > 0`, `exp(x) - 1` otherwise.
pub fn elu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(elu_scalar)
}

fn elu_scalar<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output: 1 above zero, `y + 1 = exp(x)` below.
fn elu_grad_from_output<T: Real>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Elu<T: Real> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Elu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, cache: bool) -> Tensor<T> {
        let y = elu(x);
        self.output = cache.then(|| y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let y = self
            .output
            .take()
            .expect("elu backward without a cached forward pass");
        let mut dx = grad.clone();
        for (d, &y) in dx.data_mut().iter_mut().zip(y.data()) {
            *d *= elu_grad_from_output(y);
        }
        dx
    }
}

/// Inverted dropout: in training, zero each entry with probability `p` and
/// scale survivors by `1/(1-p)`. Returns the output and the applied mask
/// (`None` when the op is the identity).
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    if p == 0.0 || mode == Mode::Infer {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

#[derive(Clone, Debug)]
pub struct Dropout<T: Real> {
    pub p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Self { p, mask: None })
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        cache: bool,
    ) -> Result<Tensor<T>> {
        let (y, mask) = dropout(x, self.p, mode, rng)?;
        if cache {
            self.mask = mask;
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        match self.mask.take() {
            None => grad.clone(),
            Some(mask) => {
                let mut dx = grad.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
                    *d *= m;
                }
                dx
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::rng_from_seed;

    #[test]
    fn elu_points() {
        let y = elu(&Tensor::from_vec(&[3], vec![2.0f64, -1.0, 0.0]).unwrap());
        assert_eq!(y.data()[0], 2.0);
        assert!((y.data()[1] - (-1.0f64).exp_m1()).abs() < 1e-15);
        assert!((y.data()[1] + 0.6321).abs() < 1e-4);
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn elu_derivative_is_continuous_at_origin() {
        let h = 1e-7f64;
        let left = (elu_scalar(0.0) - elu_scalar(-h)) / h;
        let right = (elu_scalar(h) - elu_scalar(0.0)) / h;
        assert!((left - 1.0).abs() < 1e-6 && (right - 1.0).abs() < 1e-6);
        assert_eq!(elu_grad_from_output(elu_scalar(0.0f64)), 1.0);
    }

    #[test]
    fn elu_backward_matches_exp() {
        let x = Tensor::from_vec(&[4], vec![-2.0f64, -0.5, 0.3, 4.0]).unwrap();
        let mut layer = Elu::new();
        layer.forward(&x, true);
        let dx = layer.backward(&Tensor::filled(&[4], 1.0));
        assert!((dx.data()[0] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((dx.data()[1] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(&dx.data()[2..], &[1.0, 1.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::from_vec(&[3], vec![1.0f32, -2.0, 3.0]).unwrap();
        let mut rng = rng_from_seed(0);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Infer, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        // Zero fraction ~ Binomial(1e6, 0.3)/1e6: sd 4.6e-4, so ±0.005 is >10 sd.
        let x = Tensor::filled(&[1_000_000], 1.0f64);
        let (y, _) = dropout(&x, 0.3, Mode::Train, &mut rng_from_seed(42)).unwrap();
        let n = y.len() as f64;
        let mean = y.data().iter().sum::<f64>() / n;
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((zeros - 0.3).abs() < 0.005, "zero fraction {zeros}");
    }

    #[test]
    fn dropout_backward_uses_mask() {
        let x = Tensor::filled(&[1000], 1.0f64);
        let mut layer = Dropout::new(0.5).unwrap();
        let y = layer.forward(&x, Mode::Train, &mut rng_from_seed(9), true).unwrap();
        let dx = layer.backward(&Tensor::filled(&[1000], 1.0));
        assert_eq!(y, dx);
    }
}
