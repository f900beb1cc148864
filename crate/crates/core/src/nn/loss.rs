use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Output nonlinearity and its matching loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Mutually exclusive classes, cross-entropy on the softmax.
    Softmax,
    /// Independent tags, summed binary cross-entropy on sigmoids.
    Sigmoid,
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `-ln p_target` under a max-subtracted softmax; gradient `p - target`.
pub fn softmax_xent<T: Real>(logits: &[T], target: &[T]) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = logits
        .iter()
        .map(|&z| (z - max).exp())
        .sum::<T>()
        .ln();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(target) {
        let log_p = z - max - log_total;
        if t != T::zero() {
            loss -= t * log_p;
        }
        grad.push(log_p.exp() - t);
    }
    (loss, grad)
}

/// Sum over tags of `max(z,0) - z·y + ln(1 + e^{-|z|})`; gradient `σ(z) - y`.
pub fn sigmoid_bce<T: Real>(logits: &[T], targets: &[T]) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        loss += z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        grad.push(sigmoid(z) - y);
    }
    (loss, grad)
}

impl OutputKind {
    /// Probabilities (softmax) or per-tag activations (sigmoid) for one logit row.
    pub fn activate<T: Real>(self, logits: &[T]) -> Vec<T> {
        match self {
            OutputKind::Softmax => softmax(logits),
            OutputKind::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    /// Mean loss over a `B×K` batch and its gradient with respect to the logits.
    pub fn batch_loss<T: Real>(self, logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        if logits.shape() != targets.shape() || logits.shape().len() != 2 {
            return Err(Error::shape(format!(
                "logits {:?} vs targets {:?}",
                logits.shape(),
                targets.shape()
            )));
        }
        let (b, k) = (logits.shape()[0], logits.shape()[1]);
        let inv_b = T::one() / T::from_usize(b.max(1)).expect("batch fits");
        let mut total = T::zero();
        let mut grad = Tensor::zeros(logits.shape());
        for i in 0..b {
            let (l, g) = match self {
                OutputKind::Softmax => softmax_xent(logits.item(i), targets.item(i)),
                OutputKind::Sigmoid => sigmoid_bce(logits.item(i), targets.item(i)),
            };
            total += l;
            for (d, v) in grad.item_mut(i).iter_mut().zip(g) {
                *d = v * inv_b;
            }
        }
        debug_assert_eq!(grad.len(), b * k);
        Ok((total * inv_b, grad))
    }
}
