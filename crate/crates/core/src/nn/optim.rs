use serde::{Deserialize, Serialize};

use super::param::Param;
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// L2 coefficient applied to filters and dense weights.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// `w ← w − lr·(g + λ·w)`, with the decay term only on weight-role tensors.
/// Non-trainable tensors (batch-norm running statistics) are left alone.
pub fn sgd_step<'a, T, I>(params: I, cfg: &SgdConfig)
where
    T: Real,
    I: IntoIterator<Item = &'a mut Param<T>>,
{
    let lr = T::lit(cfg.learning_rate);
    for p in params {
        if !p.role.trainable() {
            continue;
        }
        let decay = if p.role.decayed() {
            T::lit(cfg.weight_decay)
        } else {
            T::zero()
        };
        for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *w -= lr * (g + decay * *w);
        }
    }
}
