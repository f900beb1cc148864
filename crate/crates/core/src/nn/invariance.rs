//! Property tests for the invariance mechanisms the first layer relies on:
//! loudness (homogeneity), time equivariance, pitch invariance after a
//! full-height pool, and duration invariance of `m×1` filters.

use proptest::prelude::*;
use rand::Rng;

use super::conv::{Conv2d, Padding};
use super::pool::{maxpool, Extent, MaxPool};
use super::rng::rng_from_seed;
use super::tensor::Tensor;

/// `h×w` single-channel map, zero outside rows `rows` and columns `cols`.
fn supported(h: usize, w: usize, rows: (usize, usize), cols: (usize, usize), seed: u64) -> Tensor<f32> {
    let mut rng = rng_from_seed(seed);
    let mut t = Tensor::zeros(&[1, h, w]);
    for r in rows.0..=rows.1 {
        for c in cols.0..=cols.1 {
            t.data_mut()[r * w + c] = rng.random_range(-1.0..1.0);
        }
    }
    t
}

fn shifted(x: &Tensor<f32>, dr: isize, dc: isize) -> Tensor<f32> {
    let [_, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let mut out = Tensor::zeros(x.shape());
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if (0..h as isize).contains(&nr) && (0..w as isize).contains(&nc) {
                out.data_mut()[nr as usize * w + nc as usize] = x.data()[r * w + c];
            }
        }
    }
    out
}

fn conv_with_bias(filters: usize, m: usize, n: usize, padding: Padding, seed: u64) -> Conv2d<f32> {
    let mut rng = rng_from_seed(seed);
    let mut conv = Conv2d::new(1, filters, m, n, padding, &mut rng);
    for b in conv.bias.value.data_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    conv
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv_without_bias_is_homogeneous(
        h in 4usize..20, w in 4usize..20, m in 1usize..4, n in 1usize..4,
        alpha in 0.01f32..100.0, seed in any::<u64>(),
    ) {
        let x = supported(h, w, (0, h - 1), (0, w - 1), seed);
        let conv = Conv2d::<f32>::new(1, 3, m, n, Padding::SameBoth, &mut rng_from_seed(seed ^ 1));
        let a = conv.apply(&x.scale(alpha)).unwrap();
        let b = conv.apply(&x).unwrap().scale(alpha);
        let scale = b.data().iter().fold(0.0f32, |s, v| s.max(v.abs()));
        let err = a.data().iter().zip(b.data()).fold(0.0f32, |e, (p, q)| e.max((p - q).abs()));
        prop_assert!(err <= 1e-6 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn valid_conv_is_time_equivariant(
        h in 3usize..16, w in 8usize..30, m in 1usize..4, n in 1usize..5,
        k in 1usize..6, seed in any::<u64>(),
    ) {
        prop_assume!(m <= h && n + k + 1 <= w);
        // Content in the left part of the frame so a shift by k keeps it inside.
        let x = supported(h, w, (0, h - 1), (0, w - 1 - k), seed);
        let conv = conv_with_bias(3, m, n, Padding::Valid, seed ^ 2);
        let y = conv.apply(&x).unwrap();
        let ys = conv.apply(&shifted(&x, 0, k as isize)).unwrap();
        let ow = y.shape()[2];
        for f in 0..3 {
            for r in 0..y.shape()[1] {
                for c in 0..ow - k {
                    let i = (f * y.shape()[1] + r) * ow + c;
                    prop_assert_eq!(ys.data()[i + k].to_bits(), y.data()[i].to_bits());
                }
            }
        }
    }

    #[test]
    fn full_height_pool_is_pitch_invariant(
        h in 12usize..40, w in 2usize..12, m in 1usize..5, n in 1usize..3,
        k in 1usize..4, down in any::<bool>(), pool_n in 1usize..3, seed in any::<u64>(),
    ) {
        // Margin: the conv footprint of the support stays inside the valid
        // output range after a shift by k, i.e. k + m − 1 zero rows per edge.
        let margin = k + m - 1;
        prop_assume!(n <= w && h > 2 * margin + 1);
        let x = supported(h, w, (margin, h - 1 - margin), (0, w - 1), seed);
        let conv = conv_with_bias(4, m, n, Padding::Valid, seed ^ 3);
        let pool = MaxPool::new(Extent::Full, Extent::Size(pool_n.min(w - n + 1)));
        let dr = if down { k as isize } else { -(k as isize) };
        let a = maxpool(&conv.apply(&x).unwrap(), &pool).unwrap();
        let b = maxpool(&conv.apply(&shifted(&x, dr, 0)).unwrap(), &pool).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn column_filters_with_full_time_pool_ignore_translation(
        h in 4usize..30, w in 4usize..40, m in 1usize..5, len in 1usize..10,
        start in 0usize..40, to in 0usize..40, pool_m in 1usize..4, seed in any::<u64>(),
    ) {
        prop_assume!(m <= h && len <= w);
        let (a0, b0) = (start % (w - len + 1), to % (w - len + 1));
        let x = supported(h, w, (0, h - 1), (a0, a0 + len - 1), seed);
        let xs = shifted(&x, 0, b0 as isize - a0 as isize);
        let conv = conv_with_bias(3, m, 1, Padding::Valid, seed ^ 4);
        let pool = MaxPool::new(Extent::Size(pool_m.min(h - m + 1)), Extent::Full);
        let p = maxpool(&conv.apply(&x).unwrap(), &pool).unwrap();
        let q = maxpool(&conv.apply(&xs).unwrap(), &pool).unwrap();
        prop_assert_eq!(bits(&p), bits(&q));
    }
}
