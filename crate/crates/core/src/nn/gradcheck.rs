use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::rng::rng_from_seed;
use super::tensor::Tensor;
use super::Mode;
use crate::arch::{miniature, ArchId, ArchSpec};
use crate::error::Result;
use crate::nn::OutputKind;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest relative error found in one parameterized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    /// Finite-difference step relative to `max(1, |w|)`.
    pub step: f64,
    /// Seed for the dropout masks; every forward pass reuses it so the loss
    /// is a fixed function of the parameters.
    pub dropout_seed: u64,
    /// Multiplies analytic gradients before comparison (detector sanity checks).
    pub corrupt_scale: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: DEFAULT_STEP,
            dropout_seed: 0,
            corrupt_scale: None,
        }
    }
}

fn loss_at(net: &mut Network<f64>, x: &Tensor<f64>, t: &Tensor<f64>, seed: u64) -> Result<f64> {
    let logits = net.forward(x, Mode::Train, &mut rng_from_seed(seed))?;
    Ok(net.spec().output.kind.batch_loss(&logits, t)?.0)
}

/// Compares every trainable parameter's analytic gradient with a central
/// difference of the train-mode batch loss.
///
/// A layer's error is `max|analytic − numeric| / max|numeric|`, both maxima
/// taken over all of the layer's trainable scalars. Normalizing per layer
/// rather than per tensor keeps structurally zero gradients (a conv bias
/// feeding batch norm) from turning rounding noise into a large ratio.
pub fn gradcheck(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    targets: &Tensor<f64>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    net.compute_gradients(x, targets, &mut rng_from_seed(opts.dropout_seed))?;
    let analytic: Vec<(String, bool, Tensor<f64>)> = net
        .named_params()
        .into_iter()
        .map(|(n, p)| {
            let mut g = p.grad.clone();
            if let Some(s) = opts.corrupt_scale {
                g = g.scale(s);
            }
            (n, p.role.trainable(), g)
        })
        .collect();

    // Per layer: running max |analytic − numeric|, max |numeric|, scalar count.
    let mut acc: Vec<(String, f64, f64, usize)> = Vec::new();
    for (idx, (name, trainable, grad)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        let (mut max_diff, mut max_num) = (0.0f64, 0.0f64);
        for k in 0..grad.len() {
            let w = net.named_params()[idx].1.value.data()[k];
            let h = opts.step * w.abs().max(1.0);
            set(net, idx, k, w + h);
            let up = loss_at(net, x, targets, opts.dropout_seed)?;
            set(net, idx, k, w - h);
            let down = loss_at(net, x, targets, opts.dropout_seed)?;
            set(net, idx, k, w);
            let num = (up - down) / (2.0 * h);
            max_diff = max_diff.max((grad.data()[k] - num).abs());
            max_num = max_num.max(num.abs());
        }
        let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l);
        match acc.last_mut() {
            Some(r) if r.0 == layer => {
                r.1 = r.1.max(max_diff);
                r.2 = r.2.max(max_num);
                r.3 += grad.len();
            }
            _ => acc.push((layer.to_owned(), max_diff, max_num, grad.len())),
        }
    }
    let mut layers: Vec<LayerReport> = acc
        .into_iter()
        .map(|(layer, diff, num, n_params)| LayerReport {
            layer,
            n_params,
            max_rel_error: diff / num.max(1e-12),
            passed: false,
        })
        .collect();
    for r in &mut layers {
        r.passed = r.max_rel_error < opts.tolerance;
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        layers,
    })
}

fn set(net: &mut Network<f64>, idx: usize, k: usize, v: f64) {
    net.named_params_mut()[idx].1.value.data_mut()[k] = v;
}

/// Random inputs and valid targets for `spec`.
pub fn random_batch(spec: &ArchSpec, batch: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = rng_from_seed(seed);
    let (m, n) = (spec.input_shape.n_mels, spec.input_shape.n_frames);
    let x = Tensor::from_vec(
        &[batch, m, n],
        (0..batch * m * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("sized");
    let k = spec.output.n_outputs;
    let mut t = Tensor::zeros(&[batch, k]);
    for i in 0..batch {
        match spec.output.kind {
            OutputKind::Softmax => t.item_mut(i)[rng.random_range(0..k)] = 1.0,
            OutputKind::Sigmoid => {
                for v in t.item_mut(i) {
                    *v = f64::from(rng.random_range(0..2u8));
                }
            }
        }
    }
    (x, t)
}

/// Gradient check of the reduced-size variant of `arch` on a random batch.
pub fn gradcheck_arch(arch: ArchId, opts: &GradcheckOptions, seed: u64) -> Result<GradcheckReport> {
    let spec = miniature(arch);
    let mut net = Network::<f64>::new(&spec, seed)?;
    let (x, t) = random_batch(&spec, 3, seed.wrapping_add(1));
    gradcheck(&mut net, &x, &t, opts)
}
