//! 2-D cross-correlation over `channels × freq × time` maps, lowered to
//! GEMM through an im2col buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{he_init, Param, ParamRole};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Zero padding applied before a convolution.
///
/// "Same" keeps an axis length unchanged; for even filter extents the
/// extra zero goes on the trailing side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    SameTimeOnly,
    SameBoth,
}

impl Padding {
    fn pads_freq(self) -> bool {
        self == Padding::SameBoth
    }

    fn pads_time(self) -> bool {
        self != Padding::Valid
    }
}

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        kh: usize,
        kw: usize,
        padding: Padding,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 {
            return Err(Error::shape("filter extents must be at least 1"));
        }
        let axis = |len: usize, k: usize, same: bool| -> Result<(usize, usize)> {
            if same {
                Ok(((k - 1) / 2, len))
            } else if k > len {
                Err(Error::shape(format!(
                    "filter extent {k} exceeds input extent {len} under valid padding"
                )))
            } else {
                Ok((0, len - k + 1))
            }
        };
        let (pad_top, out_h) = axis(in_h, kh, padding.pads_freq())?;
        let (pad_left, out_w) = axis(in_w, kw, padding.pads_time())?;
        Ok(Self {
            in_c,
            in_h,
            in_w,
            kh,
            kw,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    /// Columns of the im2col matrix.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    /// Output positions `[lo, hi)` along time whose tap `j` lands inside the input.
    fn time_span(&self, j: usize) -> (usize, usize) {
        let shift = j as isize - self.pad_left as isize;
        let lo = (-shift).clamp(0, self.out_w as isize) as usize;
        let hi = (self.in_w as isize - shift).clamp(0, self.out_w as isize) as usize;
        (lo, hi.max(lo))
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.in_c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                let (lo, hi) = g.time_span(j);
                for y in 0..g.out_h {
                    let dst = &mut cols[row + y * g.out_w..row + (y + 1) * g.out_w];
                    let sy = y as isize + i as isize - g.pad_top as isize;
                    if sy < 0 || sy >= g.in_h as isize || lo == hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.in_h + sy as usize) * g.in_w..][..g.in_w];
                    let off = j as isize - g.pad_left as isize;
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let s0 = (lo as isize + off) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.in_c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                let (lo, hi) = g.time_span(j);
                if lo == hi {
                    continue;
                }
                for y in 0..g.out_h {
                    let sy = y as isize + i as isize - g.pad_top as isize;
                    if sy < 0 || sy >= g.in_h as isize {
                        continue;
                    }
                    let src = &cols[row + y * g.out_w + lo..row + y * g.out_w + hi];
                    let s0 = (lo as isize + j as isize - g.pad_left as isize) as usize;
                    let dst = &mut dx[(c * g.in_h + sy as usize) * g.in_w + s0..][..hi - lo];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Gradients of one convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGradients<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Convolution layer with `n_filters × in_channels × m × n` filters and one bias per filter.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub padding: Padding,
    cached_input: Option<Tensor<T>>,
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    /// He-initialized filters, zero biases.
    pub fn new<R: Rng + ?Sized>(
        in_c: usize,
        n_filters: usize,
        m: usize,
        n: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let weight = he_init(&[n_filters, in_c, m, n], in_c * m * n, rng);
        Self {
            weight: Param::new(weight, ParamRole::Weight),
            bias: Param::zeros(&[n_filters], ParamRole::Bias),
            padding,
            cached_input: None,
            cols: Vec::new(),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, padding: Padding) -> Result<Self> {
        if weight.shape().len() != 4 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "conv weight {:?} / bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, ParamRole::Weight),
            bias: Param::new(bias, ParamRole::Bias),
            padding,
            cached_input: None,
            cols: Vec::new(),
        })
    }

    pub fn n_filters(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn filter_shape(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[2], s[3])
    }

    pub fn geometry(&self, in_c: usize, in_h: usize, in_w: usize) -> Result<ConvGeometry> {
        if in_c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {in_c}",
                self.in_channels()
            )));
        }
        let (m, n) = self.filter_shape();
        ConvGeometry::new(in_c, in_h, in_w, m, n, self.padding)
    }

    fn forward_item(&self, x: &[T], g: &ConvGeometry, cols: &mut Vec<T>, out: &mut [T]) {
        let (f, k, p) = (self.n_filters(), g.patch_len(), g.positions());
        cols.resize(k * p, T::zero());
        im2col(x, g, cols);
        T::gemm(
            f,
            k,
            p,
            T::one(),
            self.weight.value.data(),
            k as isize,
            1,
            cols,
            p as isize,
            1,
            T::zero(),
            out,
            p as isize,
            1,
        );
        for (row, &b) in out.chunks_mut(p).zip(self.bias.value.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
    }

    /// Applies the layer to one `C×M×N` map.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, h, w] = dims3(x)?;
        let g = self.geometry(c, h, w)?;
        let mut out = Tensor::zeros(&[self.n_filters(), g.out_h, g.out_w]);
        let mut cols = Vec::new();
        self.forward_item(x.data(), &g, &mut cols, out.data_mut());
        Ok(out)
    }

    /// Forward over a `B×C×M×N` batch. With `cache`, keeps the input for `backward`.
    pub fn forward(&mut self, x: Tensor<T>, cache: bool) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4(&x)?;
        let g = self.geometry(c, h, w)?;
        let mut out = Tensor::zeros(&[b, self.n_filters(), g.out_h, g.out_w]);
        let mut cols = std::mem::take(&mut self.cols);
        for i in 0..b {
            self.forward_item(x.item(i), &g, &mut cols, out.item_mut(i));
        }
        self.cols = cols;
        self.cached_input = cache.then_some(x);
        Ok(out)
    }

    /// Accumulates parameter gradients for the cached batch, in batch order.
    /// Returns the input gradient when requested.
    pub fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self
            .cached_input
            .take()
            .expect("conv backward without a cached forward pass");
        let [b, c, h, w] = dims4(&x).expect("cached input is 4-D");
        let g = self.geometry(c, h, w).expect("cached geometry is valid");
        let mut cols = std::mem::take(&mut self.cols);
        let mut dcols = Vec::new();
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for i in 0..b {
            let (wgrad, bgrad) = (&mut self.weight.grad, &mut self.bias.grad);
            accumulate_item(
                &self.weight.value,
                x.item(i),
                grad.item(i),
                &g,
                &mut cols,
                wgrad,
                bgrad,
                dx.as_mut().map(|d| (d.item_mut(i), &mut dcols)),
            );
        }
        self.cols = cols;
        dx
    }

    /// Gradients of `sum(grad_out ⊙ conv(x))` for a single `C×M×N` map.
    pub fn gradients(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGradients<T>> {
        let [c, h, w] = dims3(x)?;
        let g = self.geometry(c, h, w)?;
        if grad_out.shape() != [self.n_filters(), g.out_h, g.out_w] {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output shape",
                grad_out.shape()
            )));
        }
        let mut weight = Tensor::zeros(self.weight.value.shape());
        let mut bias = Tensor::zeros(self.bias.value.shape());
        let mut input = Tensor::zeros(x.shape());
        let (mut cols, mut dcols) = (Vec::new(), Vec::new());
        accumulate_item(
            &self.weight.value,
            x.data(),
            grad_out.data(),
            &g,
            &mut cols,
            &mut weight,
            &mut bias,
            Some((input.data_mut(), &mut dcols)),
        );
        Ok(ConvGradients {
            input,
            weight,
            bias,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_item<T: Real>(
    weight: &Tensor<T>,
    x: &[T],
    dy: &[T],
    g: &ConvGeometry,
    cols: &mut Vec<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    dx: Option<(&mut [T], &mut Vec<T>)>,
) {
    let (f, k, p) = (weight.shape()[0], g.patch_len(), g.positions());
    cols.resize(k * p, T::zero());
    im2col(x, g, cols);
    // dW += dY · colsᵀ
    T::gemm(
        f,
        p,
        k,
        T::one(),
        dy,
        p as isize,
        1,
        cols,
        1,
        p as isize,
        T::one(),
        dw.data_mut(),
        k as isize,
        1,
    );
    for (acc, row) in db.data_mut().iter_mut().zip(dy.chunks(p)) {
        *acc += row.iter().copied().sum::<T>();
    }
    if let Some((dx, dcols)) = dx {
        // dcols = Wᵀ · dY
        dcols.resize(k * p, T::zero());
        T::gemm(
            k,
            f,
            p,
            T::one(),
            weight.data(),
            1,
            k as isize,
            dy,
            p as isize,
            1,
            T::zero(),
            dcols,
            p as isize,
            1,
        );
        col2im_add(dcols, g, dx);
    }
}

pub(crate) fn dims3<T: Real>(x: &Tensor<T>) -> Result<[usize; 3]> {
    match *x.shape() {
        [c, h, w] => Ok([c, h, w]),
        ref s => Err(Error::shape(format!("expected a C×M×N map, got {s:?}"))),
    }
}

pub(crate) fn dims4<T: Real>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(Error::shape(format!("expected a B×C×M×N batch, got {s:?}"))),
    }
}
