use super::conv::dims4;
use super::param::{Param, ParamRole};
use super::tensor::{Real, Tensor};
use super::Mode;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Cache<T: Real> {
    /// Normalized activations and per-channel `1/sqrt(var+eps)` from batch statistics.
    Train { xhat: Tensor<T>, inv_std: Vec<T> },
    /// Inference path: activations normalized by running statistics and the
    /// per-channel input scale `gamma/sqrt(running_var+eps)`.
    Infer { xhat: Tensor<T>, scale: Vec<T> },
}

/// Per-channel batch normalization over `B×C×M×N` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub epsilon: T,
    cache: Option<Cache<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], T::one(), ParamRole::Scale),
            beta: Param::zeros(&[channels], ParamRole::Shift),
            running_mean: Param::zeros(&[channels], ParamRole::RunningMean),
            running_var: Param::filled(&[channels], T::one(), ParamRole::RunningVar),
            momentum: T::lit(BN_MOMENTUM),
            epsilon: T::lit(BN_EPSILON),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, cache: bool) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4(x)?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let plane = h * w;
        let population = b * plane;
        let mut y = Tensor::zeros(x.shape());
        match mode {
            Mode::Train => {
                if population < 2 {
                    return Err(Error::DegenerateBatch(population));
                }
                let n = T::from_usize(population).expect("population fits");
                let mut xhat = Tensor::zeros(x.shape());
                let mut inv_stds = Vec::with_capacity(c);
                for ch in 0..c {
                    let planes = || (0..b).map(move |i| (i * c + ch) * plane);
                    let mut sum = T::zero();
                    for off in planes() {
                        sum += x.data()[off..off + plane].iter().copied().sum::<T>();
                    }
                    let mean = sum / n;
                    let mut ss = T::zero();
                    for off in planes() {
                        ss += x.data()[off..off + plane]
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<T>();
                    }
                    let var = ss / n;
                    let inv_std = T::one() / (var + self.epsilon).sqrt();
                    let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                    for off in planes() {
                        for k in off..off + plane {
                            let xh = (x.data()[k] - mean) * inv_std;
                            xhat.data_mut()[k] = xh;
                            y.data_mut()[k] = g * xh + bt;
                        }
                    }
                    let mom = self.momentum;
                    let unbiased = ss / (n - T::one());
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = mom * *rm + (T::one() - mom) * mean;
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = mom * *rv + (T::one() - mom) * unbiased;
                    inv_stds.push(inv_std);
                }
                self.cache = cache.then_some(Cache::Train {
                    xhat,
                    inv_std: inv_stds,
                });
            }
            Mode::Infer => {
                let mut xhat = Tensor::zeros(x.shape());
                let mut scales = Vec::with_capacity(c);
                for ch in 0..c {
                    let rstd = T::one() / (self.running_var.value.data()[ch] + self.epsilon).sqrt();
                    let rm = self.running_mean.value.data()[ch];
                    let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                    for i in 0..b {
                        let off = (i * c + ch) * plane;
                        for k in off..off + plane {
                            let xh = (x.data()[k] - rm) * rstd;
                            xhat.data_mut()[k] = xh;
                            y.data_mut()[k] = g * xh + bt;
                        }
                    }
                    scales.push(g * rstd);
                }
                self.cache = cache.then_some(Cache::Infer {
                    xhat,
                    scale: scales,
                });
            }
        }
        Ok(y)
    }

    /// Accumulates `gamma`/`beta` gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self
            .cache
            .take()
            .expect("batch norm backward without a cached forward pass");
        let shape = dy.shape().to_vec();
        let (b, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        let mut dx = Tensor::zeros(&shape);
        match cache {
            Cache::Train { xhat, inv_std } => {
                let n = T::from_usize(b * plane).expect("population fits");
                for ch in 0..c {
                    let offs: Vec<usize> = (0..b).map(|i| (i * c + ch) * plane).collect();
                    let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
                    for &off in &offs {
                        for k in off..off + plane {
                            sum_dy += dy.data()[k];
                            sum_dy_xh += dy.data()[k] * xhat.data()[k];
                        }
                    }
                    self.gamma.grad.data_mut()[ch] += sum_dy_xh;
                    self.beta.grad.data_mut()[ch] += sum_dy;
                    let k0 = self.gamma.value.data()[ch] * inv_std[ch] / n;
                    for &off in &offs {
                        for k in off..off + plane {
                            dx.data_mut()[k] =
                                k0 * (n * dy.data()[k] - sum_dy - xhat.data()[k] * sum_dy_xh);
                        }
                    }
                }
            }
            Cache::Infer { xhat, scale } => {
                // Running statistics are constants here.
                for ch in 0..c {
                    for i in 0..b {
                        let off = (i * c + ch) * plane;
                        for k in off..off + plane {
                            let d = dy.data()[k];
                            dx.data_mut()[k] = d * scale[ch];
                            self.gamma.grad.data_mut()[ch] += d * xhat.data()[k];
                            self.beta.grad.data_mut()[ch] += d;
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(values: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(shape, values).unwrap()
    }

    #[test]
    fn constant_input_centers_to_zero() {
        let mut bn = BatchNorm::<f64>::new(2);
        let y = bn.forward(&Tensor::filled(&[3, 2, 2, 2], 4.2), Mode::Train, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_shift_on_constant_input() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.beta.value.fill(5.0);
        let y = bn.forward(&Tensor::filled(&[2, 1, 3, 3], -1.0), Mode::Train, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn train_output_is_standardized_per_channel() {
        let (b, c, h, w) = (4, 3, 5, 6);
        let mut seed = 12345u64;
        let values = (0..b * c * h * w)
            .map(|i| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 33) as f64 / (1u64 << 31) as f64) * 10.0 + (i % 3) as f64 * 7.0
            })
            .collect();
        let mut bn = BatchNorm::<f64>::new(c);
        let y = bn.forward(&batch(values, &[b, c, h, w]), Mode::Train, false).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..b)
                .flat_map(|i| y.item(i)[ch * h * w..(ch + 1) * h * w].to_vec())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.forward(&batch(vec![0.0, 2.0], &[2, 1, 1, 1]), Mode::Train, false).unwrap();
        // mean 1, unbiased var 2
        assert!((bn.running_mean.value.data()[0] - 0.1).abs() < 1e-12);
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
        let y = bn.forward(&batch(vec![0.1], &[1, 1, 1, 1]), Mode::Infer, false).unwrap();
        assert!(y.data()[0].abs() < 1e-12);
    }

    #[test]
    fn degenerate_population_is_error() {
        let mut bn = BatchNorm::<f32>::new(1);
        let r = bn.forward(&Tensor::zeros(&[1, 1, 1, 1]), Mode::Train, false);
        assert!(matches!(r, Err(Error::DegenerateBatch(1))));
        assert!(bn.forward(&Tensor::zeros(&[1, 1, 1, 1]), Mode::Infer, false).is_ok());
    }

    #[test]
    fn train_gradients_match_finite_differences() {
        let shape = [3, 2, 2, 3];
        let n: usize = shape.iter().product();
        let x = batch((0..n).map(|i| ((i * 37 % 11) as f64).sin() * 2.0).collect(), &shape);
        let r = batch((0..n).map(|i| ((i * 13 % 7) as f64).cos()).collect(), &shape);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma.value = batch(vec![1.3, -0.7], &[2]);
        bn.beta.value = batch(vec![0.2, 0.5], &[2]);
        let loss = |bn: &mut BatchNorm<f64>, x: &Tensor<f64>| -> f64 {
            let y = bn.forward(x, Mode::Train, false).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        bn.forward(&x, Mode::Train, true).unwrap();
        let dx = bn.backward(&r);
        let h = 1e-6;
        for i in 0..n {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up = loss(&mut bn, &xp);
            xp.data_mut()[i] -= 2.0 * h;
            let num = (up - loss(&mut bn, &xp)) / (2.0 * h);
            assert!((dx.data()[i] - num).abs() < 1e-6 * num.abs().max(1.0), "x {i}");
        }
        for ch in 0..2 {
            let mut b2 = bn.clone();
            b2.gamma.value.data_mut()[ch] += h;
            let up = loss(&mut b2, &x);
            b2.gamma.value.data_mut()[ch] -= 2.0 * h;
            let num = (up - loss(&mut b2, &x)) / (2.0 * h);
            assert!((bn.gamma.grad.data()[ch] - num).abs() < 1e-6 * num.abs().max(1.0));
        }
    }
}
