use serde::{Deserialize, Serialize};

use super::conv::{dims3, dims4};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Pool window extent along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extent {
    /// The whole remaining axis.
    Full,
    Size(usize),
}

impl Extent {
    /// Window length on an axis of `len`.
    pub fn resolve(self, len: usize) -> Result<usize> {
        match self {
            Extent::Full if len >= 1 => Ok(len),
            Extent::Size(k) if k >= 1 && k <= len => Ok(k),
            _ => Err(Error::shape(format!(
                "pool extent {self} does not fit an axis of length {len}"
            ))),
        }
    }
}

impl std::fmt::Display for Extent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extent::Full => f.write_str("FULL"),
            Extent::Size(k) => write!(f, "{k}"),
        }
    }
}

/// Non-overlapping max-pool `MP(pool_m, pool_n)`.
///
/// When an extent does not divide its axis the trailing remainder is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaxPool {
    pub pool_m: Extent,
    pub pool_n: Extent,
}

/// Resolved window and output sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub ph: usize,
    pub pw: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl MaxPool {
    pub fn new(pool_m: Extent, pool_n: Extent) -> Self {
        Self { pool_m, pool_n }
    }

    pub fn geometry(&self, in_h: usize, in_w: usize) -> Result<PoolGeometry> {
        let ph = self.pool_m.resolve(in_h)?;
        let pw = self.pool_n.resolve(in_w)?;
        Ok(PoolGeometry {
            ph,
            pw,
            out_h: in_h / ph,
            out_w: in_w / pw,
        })
    }
}

/// Max over each window of every channel plane; `argmax` receives the flat
/// input offset (within the item) of each winner.
fn pool_item<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &PoolGeometry,
    out: &mut [T],
    mut argmax: Option<&mut [u32]>,
) {
    let mut o = 0;
    for ch in 0..c {
        let plane = ch * h * w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = plane + oy * g.ph * w + ox * g.pw;
                for y in oy * g.ph..(oy + 1) * g.ph {
                    let row = plane + y * w;
                    for i in row + ox * g.pw..row + (ox + 1) * g.pw {
                        // Strict comparison keeps the first maximum in row-major order.
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out[o] = x[best];
                if let Some(a) = argmax.as_deref_mut() {
                    a[o] = best as u32;
                }
                o += 1;
            }
        }
    }
}

/// Functional max-pool of a single `C×M×N` map.
pub fn maxpool<T: Real>(x: &Tensor<T>, pool: &MaxPool) -> Result<Tensor<T>> {
    let [c, h, w] = dims3(x)?;
    let g = pool.geometry(h, w)?;
    let mut out = Tensor::zeros(&[c, g.out_h, g.out_w]);
    pool_item(x.data(), c, h, w, &g, out.data_mut(), None);
    Ok(out)
}

/// Max-pool layer over `B×C×M×N` batches, remembering winners for backward.
#[derive(Clone, Debug)]
pub struct MaxPoolLayer {
    pub pool: MaxPool,
    argmax: Vec<u32>,
    input_shape: Vec<usize>,
}

impl MaxPoolLayer {
    pub fn new(pool: MaxPool) -> Self {
        Self {
            pool,
            argmax: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4(x)?;
        let g = self.pool.geometry(h, w)?;
        let mut out = Tensor::zeros(&[b, c, g.out_h, g.out_w]);
        let per_item = c * g.out_h * g.out_w;
        if cache {
            self.argmax.resize(b * per_item, 0);
            self.input_shape = x.shape().to_vec();
        }
        for i in 0..b {
            let am = cache.then(|| &mut self.argmax[i * per_item..(i + 1) * per_item]);
            pool_item(x.item(i), c, h, w, &g, out.item_mut(i), am);
        }
        Ok(out)
    }

    /// Routes each output gradient to its window's winning input.
    pub fn backward<T: Real>(&self, grad: &Tensor<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(&self.input_shape);
        let b = self.input_shape[0];
        let per_item = grad.len() / b.max(1);
        for i in 0..b {
            let g = grad.item(i);
            let am = &self.argmax[i * per_item..(i + 1) * per_item];
            let d = dx.item_mut(i);
            for (&gv, &a) in g.iter().zip(am) {
                d[a as usize] += gv;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn full_height_column() {
        let p = MaxPool::new(Extent::Full, Extent::Size(1));
        let y = maxpool(&t(&[1, 3, 1], &[3.0, -1.0, 7.0]), &p).unwrap();
        assert_eq!((y.shape(), y.data()), (&[1usize, 1, 1][..], &[7.0f32][..]));
    }

    #[test]
    fn unit_pool_is_identity() {
        let x = t(&[2, 2, 3], &[1.0, 5.0, -2.0, 0.0, 4.0, 4.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0]);
        let p = MaxPool::new(Extent::Size(1), Extent::Size(1));
        assert_eq!(maxpool(&x, &p).unwrap(), x);
    }

    #[test]
    fn argmax_routing() {
        let mut layer = MaxPoolLayer::new(MaxPool::new(Extent::Size(2), Extent::Size(2)));
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = layer.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = layer.backward(&t(&[1, 1, 1, 1], &[1.0]));
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_go_to_first_in_row_major_order() {
        let mut layer = MaxPoolLayer::new(MaxPool::new(Extent::Full, Extent::Full));
        let x = t(&[1, 1, 2, 2], &[1.0, 5.0, 5.0, 5.0]);
        layer.forward(&x, true).unwrap();
        let dx = layer.backward(&t(&[1, 1, 1, 1], &[2.0]));
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn remainder_is_dropped() {
        let p = MaxPool::new(Extent::Full, Extent::Size(4));
        let g = p.geometry(29, 188).unwrap();
        assert_eq!((g.out_h, g.out_w), (1, 47));
        let g = p.geometry(1, 187).unwrap();
        assert_eq!(g.out_w, 46);
        let x = t(&[1, 1, 5], &[1.0, 2.0, 3.0, 4.0, 100.0]);
        let y = maxpool(&x, &MaxPool::new(Extent::Full, Extent::Size(2))).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);
    }

    #[test]
    fn oversized_extent_is_error() {
        let p = MaxPool::new(Extent::Size(3), Extent::Size(1));
        assert!(p.geometry(2, 5).is_err());
        assert!(MaxPool::new(Extent::Size(0), Extent::Full).geometry(4, 4).is_err());
    }

    #[test]
    fn batch_items_are_independent() {
        let mut layer = MaxPoolLayer::new(MaxPool::new(Extent::Size(1), Extent::Size(2)));
        let x = t(&[2, 1, 1, 4], &[1.0, 0.0, 0.0, 3.0, 5.0, 6.0, 8.0, 7.0]);
        let y = layer.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 6.0, 8.0]);
        let dx = layer.backward(&t(&[2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 2.0, 0.0, 3.0, 4.0, 0.0]);
    }
}
