use rand::Rng;

use super::dense::Dense;
use super::layer::Layer;
use super::optim::{sgd_step, SgdConfig};
use super::param::Param;
use super::rng::{EngineRng, RngStreams};
use super::tensor::{Real, Tensor};
use super::Mode;
use crate::arch::{propagate_shapes, ArchSpec, LayerSpec, Merge};
use crate::error::{Error, Result};

/// A model instantiated from an [`ArchSpec`].
#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    spec: ArchSpec,
    branches: Vec<Vec<Layer<T>>>,
    /// Per-item output shape of each branch.
    branch_shapes: Vec<Vec<usize>>,
    trunk: Vec<Layer<T>>,
    head: Dense<T>,
}

impl<T: Real> Network<T> {
    /// He-initialized network using the init stream derived from `seed`.
    pub fn new(spec: &ArchSpec, seed: u64) -> Result<Self> {
        Self::with_rng(spec, &mut RngStreams::new(seed).init)
    }

    /// Initializes branches in order, then the trunk, then the head.
    pub fn with_rng<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Result<Self> {
        let table = propagate_shapes(spec)?;
        let input = vec![1, spec.input_shape.n_mels, spec.input_shape.n_frames];
        let mut branches = Vec::with_capacity(spec.branches.len());
        let mut branch_shapes = Vec::with_capacity(spec.branches.len());
        for b in &spec.branches {
            let mut layers_spec = vec![LayerSpec::Conv {
                n_filters: b.n_filters,
                filter_m: b.filter_m,
                filter_n: b.filter_n,
                padding: spec.branch_padding,
            }];
            if spec.branch_batch_norm {
                layers_spec.push(LayerSpec::BatchNorm);
            }
            layers_spec.push(LayerSpec::Elu);
            layers_spec.push(LayerSpec::MaxPool {
                pool_m: b.pool_m,
                pool_n: b.pool_n,
            });
            let (layers, out) = build_chain(&layers_spec, &input, rng)?;
            branches.push(layers);
            branch_shapes.push(out);
        }
        let (trunk, out) = build_chain(&spec.trunk, &table.merged, rng)?;
        let head = Dense::new(out.iter().product(), spec.output.n_outputs, rng);
        Ok(Self {
            spec: spec.clone(),
            branches,
            branch_shapes,
            trunk,
            head,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    /// Accepts `B×M×N` or `B×1×M×N` input and returns `B×K` logits.
    /// In train mode every layer keeps what it needs for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut EngineRng) -> Result<Tensor<T>> {
        let (m, n) = (self.spec.input_shape.n_mels, self.spec.input_shape.n_frames);
        let b = match *x.shape() {
            [b, mm, nn] | [b, 1, mm, nn] if (mm, nn) == (m, n) => b,
            ref s => {
                return Err(Error::shape(format!(
                    "network expects B×{m}×{n} input, got {s:?}"
                )))
            }
        };
        if b == 0 {
            return Err(Error::Empty("empty batch".into()));
        }
        let x = x.clone().reshape(&[b, 1, m, n])?;
        let mut h = if self.branches.is_empty() {
            x
        } else {
            let mut outs = Vec::with_capacity(self.branches.len());
            for layers in &mut self.branches {
                let mut y = x.clone();
                for l in layers.iter_mut() {
                    y = l.forward(y, mode, rng)?;
                }
                outs.push(y);
            }
            self.merge(outs, b)?
        };
        for l in &mut self.trunk {
            h = l.forward(h, mode, rng)?;
        }
        self.head.forward(h, mode == Mode::Train)
    }

    fn merge(&self, outs: Vec<Tensor<T>>, b: usize) -> Result<Tensor<T>> {
        let per_item: usize = self.branch_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let mut data = Vec::with_capacity(b * per_item);
        for i in 0..b {
            for o in &outs {
                data.extend_from_slice(o.item(i));
            }
        }
        let shape = match self.spec.merge {
            Merge::FlattenConcat => vec![b, per_item],
            Merge::ChannelConcat => {
                let s = &self.branch_shapes[0];
                let c = self.branch_shapes.iter().map(|s| s[0]).sum();
                vec![b, c, s[1], s[2]]
            }
        };
        Tensor::from_vec(&shape, data)
    }

    /// Backpropagates the logit gradient of the last train-mode forward,
    /// accumulating into every parameter's `grad`.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) {
        let first_param = if self.branches.is_empty() {
            self.trunk.iter().position(Layer::has_params)
        } else {
            None
        };
        let need_head = !self.branches.is_empty() || first_param.is_some();
        let Some(mut g) = self.head.backward(grad_logits, need_head) else {
            return;
        };
        for (j, l) in self.trunk.iter_mut().enumerate().rev() {
            let need = first_param.is_none_or(|p| j > p);
            match l.backward(g, need) {
                Some(next) if need => g = next,
                _ => return,
            }
        }
        if self.branches.is_empty() {
            return;
        }
        let b = g.shape()[0];
        let sizes: Vec<usize> = self.branch_shapes.iter().map(|s| s.iter().product()).collect();
        let per_item: usize = sizes.iter().sum();
        let mut offset = 0;
        for ((layers, shape), &size) in self.branches.iter_mut().zip(&self.branch_shapes).zip(&sizes) {
            let mut data = Vec::with_capacity(b * size);
            for i in 0..b {
                let start = i * per_item + offset;
                data.extend_from_slice(&g.data()[start..start + size]);
            }
            let mut full = vec![b];
            full.extend_from_slice(shape);
            let mut gb = Tensor::from_vec(&full, data).expect("branch gradient slice");
            for (k, l) in layers.iter_mut().enumerate().rev() {
                match l.backward(gb, k > 0) {
                    Some(next) => gb = next,
                    None => break,
                }
            }
            offset += size;
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Every parameter tensor (including batch-norm running statistics)
    /// with its stable name, in serialization order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, layers) in self.branches.iter().enumerate() {
            for l in layers {
                for (n, p) in l.params() {
                    out.push((format!("branch{i}.{}.{n}", l.kind()), p));
                }
            }
        }
        for (j, l) in self.trunk.iter().enumerate() {
            for (n, p) in l.params() {
                out.push((format!("trunk{j}.{}.{n}", l.kind()), p));
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, layers) in self.branches.iter_mut().enumerate() {
            for l in layers {
                let kind = l.kind();
                for (n, p) in l.params_mut() {
                    out.push((format!("branch{i}.{kind}.{n}"), p));
                }
            }
        }
        for (j, l) in self.trunk.iter_mut().enumerate() {
            let kind = l.kind();
            for (n, p) in l.params_mut() {
                out.push((format!("trunk{j}.{kind}.{n}"), p));
            }
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    /// Number of stored scalars across all parameter tensors.
    pub fn scalar_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Inference-mode output probabilities (softmax) or tag activations (sigmoid).
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // Inference never draws from the generator.
        let mut rng = super::rng::rng_from_seed(0);
        let logits = self.forward(x, Mode::Infer, &mut rng)?;
        let k = logits.shape()[1];
        let kind = self.spec.output.kind;
        let data = logits.data().chunks(k).flat_map(|row| kind.activate(row)).collect();
        Tensor::from_vec(logits.shape(), data)
    }

    /// Forward + backward on one mini-batch; returns the mean loss without
    /// updating parameters.
    pub fn compute_gradients(
        &mut self,
        x: &Tensor<T>,
        targets: &Tensor<T>,
        rng: &mut EngineRng,
    ) -> Result<T> {
        self.zero_grad();
        let logits = self.forward(x, Mode::Train, rng)?;
        let (loss, grad) = self.spec.output.kind.batch_loss(&logits, targets)?;
        self.backward(&grad);
        Ok(loss)
    }

    /// One SGD step on a mini-batch; returns the batch loss before the update.
    pub fn train_step(
        &mut self,
        x: &Tensor<T>,
        targets: &Tensor<T>,
        sgd: &SgdConfig,
        rng: &mut EngineRng,
    ) -> Result<T> {
        let loss = self.compute_gradients(x, targets, rng)?;
        if loss.is_finite() {
            sgd_step(self.named_params_mut().into_iter().map(|(_, p)| p), sgd);
        }
        Ok(loss)
    }
}

fn build_chain<T: Real, R: Rng + ?Sized>(
    specs: &[LayerSpec],
    input: &[usize],
    rng: &mut R,
) -> Result<(Vec<Layer<T>>, Vec<usize>)> {
    let mut shape = input.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for s in specs {
        layers.push(Layer::build(s, &shape, rng)?);
        shape = next_shape(s, &shape)?;
    }
    Ok((layers, shape))
}

fn next_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    use crate::nn::{ConvGeometry, MaxPool};
    Ok(match *spec {
        LayerSpec::Conv {
            n_filters,
            filter_m,
            filter_n,
            padding,
        } => {
            let g = ConvGeometry::new(input[0], input[1], input[2], filter_m, filter_n, padding)?;
            vec![n_filters, g.out_h, g.out_w]
        }
        LayerSpec::MaxPool { pool_m, pool_n } => {
            let g = MaxPool::new(pool_m, pool_n).geometry(input[1], input[2])?;
            vec![input[0], g.out_h, g.out_w]
        }
        LayerSpec::Flatten => vec![input.iter().product()],
        LayerSpec::Dense { units } => vec![units],
        LayerSpec::BatchNorm | LayerSpec::Elu | LayerSpec::Dropout { .. } => input.to_vec(),
    })
}
