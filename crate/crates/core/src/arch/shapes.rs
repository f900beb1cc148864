use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, LayerSpec, Merge};
use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, MaxPool};

/// Output shape (per item, batch axis omitted) and parameter count of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub index: usize,
    pub name: String,
    pub layer: String,
    pub output: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTable {
    pub rows: Vec<ShapeRow>,
    /// Shape entering the trunk.
    pub merged: Vec<usize>,
    pub total_params: usize,
}

impl ShapeTable {
    pub fn row(&self, name: &str) -> Option<&ShapeRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Plain-text table, one line per layer.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>3}  {:<16} {:<28} {:<16} {:>10}", "#", "name", "layer", "output", "params");
        for r in &self.rows {
            let shape = r
                .output
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("×");
            let _ = writeln!(
                out,
                "{:>3}  {:<16} {:<28} {:<16} {:>10}",
                r.index, r.name, r.layer, shape, r.params
            );
        }
        let _ = writeln!(out, "total parameters: {}", self.total_params);
        out
    }
}

struct Walker {
    rows: Vec<ShapeRow>,
}

impl Walker {
    fn push(&mut self, name: String, layer: String, output: Vec<usize>, params: usize) {
        let index = self.rows.len();
        self.rows.push(ShapeRow {
            index,
            name,
            layer,
            output,
            params,
        });
    }

    fn underflow(&self, name: &str, detail: impl std::fmt::Display) -> Error {
        Error::ShapeUnderflow {
            index: self.rows.len(),
            layer: name.to_owned(),
            detail: detail.to_string(),
        }
    }

    fn map3(&self, name: &str, shape: &[usize]) -> Result<[usize; 3]> {
        match *shape {
            [c, h, w] => Ok([c, h, w]),
            _ => Err(Error::shape(format!(
                "{name} needs a C×M×N input, got {shape:?}"
            ))),
        }
    }

    fn layer(&mut self, name: String, spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
        let (output, params) = match *spec {
            LayerSpec::Conv {
                n_filters,
                filter_m,
                filter_n,
                padding,
            } => {
                let [c, h, w] = self.map3(&name, input)?;
                let g = ConvGeometry::new(c, h, w, filter_m, filter_n, padding)
                    .map_err(|e| self.underflow(&name, e))?;
                if n_filters == 0 {
                    return Err(Error::invalid(format!("{name}: zero filters")));
                }
                (
                    vec![n_filters, g.out_h, g.out_w],
                    n_filters * (c * filter_m * filter_n + 1),
                )
            }
            LayerSpec::BatchNorm => {
                let [c, _, _] = self.map3(&name, input)?;
                (input.to_vec(), 4 * c)
            }
            LayerSpec::Elu => (input.to_vec(), 0),
            LayerSpec::MaxPool { pool_m, pool_n } => {
                let [c, h, w] = self.map3(&name, input)?;
                let g = MaxPool::new(pool_m, pool_n)
                    .geometry(h, w)
                    .map_err(|e| self.underflow(&name, e))?;
                (vec![c, g.out_h, g.out_w], 0)
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::invalid(format!("{name}: dropout {p} outside [0, 1)")));
                }
                (input.to_vec(), 0)
            }
            LayerSpec::Flatten => (vec![input.iter().product()], 0),
            LayerSpec::Dense { units } => {
                let d: usize = input.iter().product();
                (vec![units], units * (d + 1))
            }
        };
        self.push(name, spec.describe(), output.clone(), params);
        Ok(output)
    }
}

/// Per-layer output shapes, in execution order: branch layers, the merge,
/// trunk layers, then the head.
pub fn propagate_shapes(spec: &ArchSpec) -> Result<ShapeTable> {
    let input = vec![1, spec.input_shape.n_mels, spec.input_shape.n_frames];
    if spec.input_shape.n_mels == 0 || spec.input_shape.n_frames == 0 {
        return Err(Error::invalid("input shape must be non-empty"));
    }
    let mut w = Walker { rows: Vec::new() };

    let mut merged = input.clone();
    if !spec.branches.is_empty() {
        let mut outs = Vec::with_capacity(spec.branches.len());
        for (i, b) in spec.branches.iter().enumerate() {
            let conv = LayerSpec::Conv {
                n_filters: b.n_filters,
                filter_m: b.filter_m,
                filter_n: b.filter_n,
                padding: spec.branch_padding,
            };
            let mut s = w.layer(format!("branch{i}.conv"), &conv, &input)?;
            if spec.branch_batch_norm {
                s = w.layer(format!("branch{i}.bn"), &LayerSpec::BatchNorm, &s)?;
            }
            s = w.layer(format!("branch{i}.elu"), &LayerSpec::Elu, &s)?;
            let pool = LayerSpec::MaxPool {
                pool_m: b.pool_m,
                pool_n: b.pool_n,
            };
            s = w.layer(format!("branch{i}.pool"), &pool, &s)?;
            outs.push(s);
        }
        merged = match spec.merge {
            Merge::FlattenConcat => vec![outs.iter().map(|s| s.iter().product::<usize>()).sum()],
            Merge::ChannelConcat => {
                let (h, wd) = (outs[0][1], outs[0][2]);
                if let Some((i, s)) = outs.iter().enumerate().find(|(_, s)| (s[1], s[2]) != (h, wd)) {
                    return Err(Error::shape(format!(
                        "branch{i} output {}×{} cannot be channel-merged with {h}×{wd}",
                        s[1], s[2]
                    )));
                }
                vec![outs.iter().map(|s| s[0]).sum(), h, wd]
            }
        };
        let label = match spec.merge {
            Merge::FlattenConcat => "flatten+concat",
            Merge::ChannelConcat => "channel concat",
        };
        w.push("merge".into(), label.into(), merged.clone(), 0);
    }

    let mut s = merged.clone();
    for (j, layer) in spec.trunk.iter().enumerate() {
        s = w.layer(format!("trunk{j}.{}", layer.kind()), layer, &s)?;
    }
    if spec.output.n_outputs == 0 {
        return Err(Error::invalid("output layer needs at least one unit"));
    }
    let head = LayerSpec::Dense {
        units: spec.output.n_outputs,
    };
    w.layer("head".into(), &head, &s)?;
    let total_params = w.rows.iter().map(|r| r.params).sum();
    Ok(ShapeTable {
        rows: w.rows,
        merged,
        total_params,
    })
}

/// Analytic number of scalars in the instantiated model: weights, biases,
/// and the four per-channel batch-norm vectors (scale, shift, running mean,
/// running variance).
pub fn param_count(spec: &ArchSpec) -> Result<usize> {
    Ok(propagate_shapes(spec)?.total_params)
}

