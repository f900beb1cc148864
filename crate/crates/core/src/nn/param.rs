use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{Real, Tensor};

/// What a parameter tensor is for; decides whether SGD touches it and
/// whether weight decay applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Only convolution filters and dense weights are L2-regularized.
    pub fn decayed(self) -> bool {
        self == ParamRole::Weight
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub role: ParamRole,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>, role: ParamRole) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, role }
    }

    pub fn zeros(shape: &[usize], role: ParamRole) -> Self {
        Self::new(Tensor::zeros(shape), role)
    }

    pub fn filled(shape: &[usize], value: T, role: ParamRole) -> Self {
        Self::new(Tensor::filled(shape, value), role)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// He initialization: i.i.d. `N(0, 2 / fan_in)`.
pub fn he_init<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches generated length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::rng_from_seed;

    #[test]
    fn he_init_statistics() {
        // 1e6 draws: the standard error of the sample variance is
        // var·sqrt(2/n) ≈ 5.7e-5 and of the mean sqrt(var/n) = 2e-4.
        let t: Tensor<f64> = he_init(&[1000, 1000], 50, &mut rng_from_seed(3));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var - 0.04).abs() < 2e-3, "var {var}");
    }

    #[test]
    fn he_init_deterministic() {
        let a: Tensor<f32> = he_init(&[4, 5], 20, &mut rng_from_seed(11));
        let b: Tensor<f32> = he_init(&[4, 5], 20, &mut rng_from_seed(11));
        assert_eq!(a, b);
    }

    #[test]
    fn roles() {
        assert!(ParamRole::Weight.decayed());
        assert!(!ParamRole::Bias.decayed());
        assert!(!ParamRole::Scale.decayed() && ParamRole::Scale.trainable());
        assert!(!ParamRole::RunningVar.trainable());
    }
}
