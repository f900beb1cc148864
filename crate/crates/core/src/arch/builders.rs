use super::{ArchId, ArchSpec, BranchSpec, InputShape, LayerSpec, Merge, OutputSpec};
use crate::error::{Error, Result};
use crate::nn::{Extent, OutputKind, Padding};

pub const SMALL_RECT_BUDGET: usize = 75_000;
pub const MLP_BUDGET: usize = 481_000;

const SMALL_RECT_POOLS: [(usize, usize); 5] = [(2, 3), (2, 3), (2, 3), (4, 2), (4, 2)];

fn branches(
    heights: &[usize],
    shapes: &[(usize, usize)],
    pool_m: Extent,
    pool_n: Extent,
) -> Vec<BranchSpec> {
    let mut out = Vec::new();
    for &(n_filters, filter_n) in shapes {
        for &filter_m in heights {
            out.push(BranchSpec {
                n_filters,
                filter_m,
                filter_n,
                pool_m,
                pool_n,
            });
        }
    }
    out
}

fn conv(n_filters: usize, filter_m: usize, filter_n: usize, padding: Padding) -> LayerSpec {
    LayerSpec::Conv {
        n_filters,
        filter_m,
        filter_n,
        padding,
    }
}

fn pool(m: usize, n: usize) -> LayerSpec {
    LayerSpec::MaxPool {
        pool_m: Extent::Size(m),
        pool_n: Extent::Size(n),
    }
}

fn softmax(n: usize) -> OutputSpec {
    OutputSpec {
        kind: OutputKind::Softmax,
        n_outputs: n,
    }
}

fn sigmoid(n: usize) -> OutputSpec {
    OutputSpec {
        kind: OutputKind::Sigmoid,
        n_outputs: n,
    }
}

/// Single wide layer over 80×21 excerpts: 50- and 70-bin filters in three
/// widths, valid padding, `MP(2, N')`, 30% dropout, 32-way softmax.
pub fn build_phoneme_single() -> ArchSpec {
    phoneme(
        InputShape::new(80, 21),
        &[50, 70],
        &[(128, 1), (64, 5), (32, 10)],
        32,
    )
}

fn phoneme(input: InputShape, heights: &[usize], shapes: &[(usize, usize)], classes: usize) -> ArchSpec {
    ArchSpec {
        arch_id: ArchId::PhonemeSingle,
        input_shape: input,
        branch_padding: Padding::Valid,
        branch_batch_norm: false,
        branches: branches(heights, shapes, Extent::Size(2), Extent::Full),
        merge: Merge::FlattenConcat,
        trunk: vec![LayerSpec::Dropout { p: 0.3 }],
        output: softmax(classes),
        widen_factor: 1,
    }
}

/// Single wide layer over 96×128 excerpts: 5- and 80-bin filters, same
/// padding, batch norm, `MP(M', 16)`, 50% dropout, 11-way softmax.
pub fn build_irmas_single() -> ArchSpec {
    irmas_single(
        InputShape::new(96, 128),
        &[5, 80],
        &[(128, 1), (64, 3), (32, 5)],
        16,
        11,
    )
}

fn irmas_single(
    input: InputShape,
    heights: &[usize],
    shapes: &[(usize, usize)],
    pool_n: usize,
    classes: usize,
) -> ArchSpec {
    ArchSpec {
        arch_id: ArchId::IrmasSingle,
        input_shape: input,
        branch_padding: Padding::SameBoth,
        branch_batch_norm: true,
        branches: branches(heights, shapes, Extent::Full, Extent::Size(pool_n)),
        merge: Merge::FlattenConcat,
        trunk: vec![LayerSpec::Dropout { p: 0.5 }],
        output: softmax(classes),
        widen_factor: 1,
    }
}

/// The single-layer IRMAS front end pooled `MP(12, 16)`, then two 128×3×3
/// conv stages with `MP(2, 2)`, a 256-unit dense layer and an 11-way softmax.
pub fn build_irmas_multi() -> ArchSpec {
    irmas_multi(
        InputShape::new(96, 128),
        &[5, 80],
        &[(128, 1), (64, 3), (32, 5)],
        (12, 16),
        128,
        256,
        11,
    )
}

fn irmas_multi(
    input: InputShape,
    heights: &[usize],
    shapes: &[(usize, usize)],
    first_pool: (usize, usize),
    deep_filters: usize,
    dense: usize,
    classes: usize,
) -> ArchSpec {
    let mut trunk = Vec::new();
    for _ in 0..2 {
        trunk.extend([
            conv(deep_filters, 3, 3, Padding::SameBoth),
            LayerSpec::BatchNorm,
            LayerSpec::Elu,
            pool(2, 2),
            LayerSpec::Dropout { p: 0.25 },
        ]);
    }
    trunk.extend([
        LayerSpec::Flatten,
        LayerSpec::Dropout { p: 0.5 },
        LayerSpec::Dense { units: dense },
        LayerSpec::Elu,
        LayerSpec::Dropout { p: 0.5 },
    ]);
    ArchSpec {
        arch_id: ArchId::IrmasMulti,
        input_shape: input,
        branch_padding: Padding::SameBoth,
        branch_batch_norm: true,
        branches: branches(
            heights,
            shapes,
            Extent::Size(first_pool.0),
            Extent::Size(first_pool.1),
        ),
        merge: Merge::ChannelConcat,
        trunk,
        output: softmax(classes),
        widen_factor: 1,
    }
}

/// Twelve first-layer filter shapes (heights 100, 75, 25 × widths 1, 3, 5, 7)
/// over 128×187 excerpts, `MP(M', 4)`, channel concatenation, then a
/// `1×8` conv, `MP(1, 4)`, a 100-unit dense layer and 50 sigmoid tags.
///
/// `widen_factor` multiplies every first-layer filter count and the trunk
/// convolution's filter count.
pub fn build_mtt_proposed(widen_factor: usize) -> Result<ArchSpec> {
    if ![1, 2, 4].contains(&widen_factor) {
        return Err(Error::invalid(format!(
            "widen factor must be 1, 2 or 4, got {widen_factor}"
        )));
    }
    let k = widen_factor;
    let counts: [(usize, [usize; 4]); 3] =
        [(100, [10, 6, 3, 3]), (75, [15, 10, 5, 5]), (25, [15, 10, 5, 5])];
    let mut branches = Vec::new();
    for (m, per_width) in counts {
        for (c, n) in per_width.into_iter().zip([1, 3, 5, 7]) {
            branches.push(BranchSpec {
                n_filters: c * k,
                filter_m: m,
                filter_n: n,
                pool_m: Extent::Full,
                pool_n: Extent::Size(4),
            });
        }
    }
    Ok(mtt(InputShape::new(128, 187), branches, (32 * k, 8, 4), 100, 50, k))
}

fn mtt(
    input: InputShape,
    branches: Vec<BranchSpec>,
    (trunk_filters, trunk_n, trunk_pool): (usize, usize, usize),
    dense: usize,
    tags: usize,
    widen_factor: usize,
) -> ArchSpec {
    ArchSpec {
        arch_id: ArchId::MttProposed,
        input_shape: input,
        branch_padding: Padding::SameTimeOnly,
        branch_batch_norm: false,
        branches,
        merge: Merge::ChannelConcat,
        trunk: vec![
            conv(trunk_filters, 1, trunk_n, Padding::Valid),
            LayerSpec::Elu,
            pool(1, trunk_pool),
            LayerSpec::Flatten,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Dense { units: dense },
            LayerSpec::Elu,
            LayerSpec::Dropout { p: 0.5 },
        ],
        output: sigmoid(tags),
        widen_factor,
    }
}

/// Five `3×3` conv + batch norm + ELU + pool stages with `filters` per layer.
pub fn small_rect_with_filters(
    input: InputShape,
    filters: usize,
    pools: &[(usize, usize)],
    tags: usize,
) -> ArchSpec {
    let mut trunk = Vec::new();
    for &(pm, pn) in pools {
        trunk.extend([
            conv(filters, 3, 3, Padding::SameBoth),
            LayerSpec::BatchNorm,
            LayerSpec::Elu,
            pool(pm, pn),
        ]);
    }
    trunk.extend([LayerSpec::Flatten, LayerSpec::Dropout { p: 0.5 }]);
    ArchSpec {
        arch_id: ArchId::MttSmallRect,
        input_shape: input,
        branch_padding: Padding::SameBoth,
        branch_batch_norm: false,
        branches: Vec::new(),
        merge: Merge::ChannelConcat,
        trunk,
        output: sigmoid(tags),
        widen_factor: 1,
    }
}

fn closest<F: Fn(usize) -> Result<usize>>(budget: usize, count: F) -> Result<usize> {
    let mut best: Option<(usize, usize)> = None;
    for x in 1.. {
        let c = count(x)?;
        let d = c.abs_diff(budget);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((x, d));
        }
        if c > budget {
            break;
        }
    }
    Ok(best.expect("at least one candidate").0)
}

/// Equal per-layer filter count whose total is closest to `budget`.
pub fn solve_small_rect_filters(input: InputShape, tags: usize, budget: usize) -> Result<usize> {
    closest(budget, |f| {
        super::param_count(&small_rect_with_filters(input, f, &SMALL_RECT_POOLS, tags))
    })
}

/// 128×187 input, pools `(2,3),(2,3),(2,3),(4,2),(4,2)` down to 1×1, filter
/// count solved for a 75k budget, 50 sigmoid tags.
pub fn build_mtt_small_rect() -> ArchSpec {
    let input = InputShape::new(128, 187);
    let f = solve_small_rect_filters(input, 50, SMALL_RECT_BUDGET)
        .expect("small-rectangular stack fits its input");
    small_rect_with_filters(input, f, &SMALL_RECT_POOLS, 50)
}

/// Flatten → dense `hidden` → ELU → dense `hidden` → ELU → softmax.
pub fn mlp_with_hidden(input: InputShape, hidden: usize, classes: usize) -> ArchSpec {
    ArchSpec {
        arch_id: ArchId::MlpBaseline,
        input_shape: input,
        branch_padding: Padding::Valid,
        branch_batch_norm: false,
        branches: Vec::new(),
        merge: Merge::FlattenConcat,
        trunk: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: hidden },
            LayerSpec::Elu,
            LayerSpec::Dense { units: hidden },
            LayerSpec::Elu,
        ],
        output: softmax(classes),
        widen_factor: 1,
    }
}

pub fn solve_mlp_hidden(input: InputShape, classes: usize, budget: usize) -> Result<usize> {
    closest(budget, |h| super::param_count(&mlp_with_hidden(input, h, classes)))
}

/// Two equal hidden layers sized so the total is closest to 481k weights.
pub fn build_mlp_baseline(input: InputShape) -> Result<ArchSpec> {
    let h = solve_mlp_hidden(input, 32, MLP_BUDGET)?;
    Ok(mlp_with_hidden(input, h, 32))
}

/// Full-size builder by id. `widen_factor` only affects `mtt_proposed`.
pub fn build(arch: ArchId, widen_factor: usize) -> Result<ArchSpec> {
    match arch {
        ArchId::PhonemeSingle => Ok(build_phoneme_single()),
        ArchId::IrmasSingle => Ok(build_irmas_single()),
        ArchId::IrmasMulti => Ok(build_irmas_multi()),
        ArchId::MttProposed => build_mtt_proposed(widen_factor),
        ArchId::MttSmallRect => Ok(build_mtt_small_rect()),
        ArchId::MlpBaseline => build_mlp_baseline(InputShape::new(80, 21)),
    }
}

/// Reduced-size variant of each architecture with the same layer sequence,
/// padding, pooling rules and merge, used for finite-difference checks.
pub fn miniature(arch: ArchId) -> ArchSpec {
    match arch {
        ArchId::PhonemeSingle => phoneme(InputShape::new(12, 6), &[5, 8], &[(2, 1), (2, 2), (1, 3)], 4),
        ArchId::IrmasSingle => irmas_single(InputShape::new(12, 8), &[2, 5], &[(2, 1), (2, 3), (1, 5)], 4, 3),
        ArchId::IrmasMulti => irmas_multi(
            InputShape::new(12, 8),
            &[2, 5],
            &[(2, 1), (1, 3)],
            (3, 2),
            3,
            5,
            3,
        ),
        ArchId::MttProposed => {
            let mut b = Vec::new();
            for (m, counts) in [(10, [2, 1]), (6, [1, 2]), (3, [1, 1])] {
                for (c, n) in counts.into_iter().zip([1, 3]) {
                    b.push(BranchSpec {
                        n_filters: c,
                        filter_m: m,
                        filter_n: n,
                        pool_m: Extent::Full,
                        pool_n: Extent::Size(2),
                    });
                }
            }
            mtt(InputShape::new(16, 12), b, (3, 3, 2), 5, 4, 1)
        }
        ArchId::MttSmallRect => small_rect_with_filters(
            InputShape::new(16, 12),
            2,
            &[(2, 2), (2, 2), (2, 1), (2, 1), (1, 3)],
            4,
        ),
        ArchId::MlpBaseline => mlp_with_hidden(InputShape::new(6, 4), 5, 4),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{param_count, propagate_shapes};
    use super::*;

    fn full_size() -> Vec<ArchSpec> {
        let mut v: Vec<ArchSpec> = ArchId::ALL
            .into_iter()
            .map(|a| build(a, 1).unwrap())
            .collect();
        v.push(build_mtt_proposed(2).unwrap());
        v.push(build_mtt_proposed(4).unwrap());
        v
    }

    #[test]
    fn every_builder_propagates_to_its_output_size() {
        for spec in full_size() {
            let table = propagate_shapes(&spec).unwrap();
            let expected = match spec.arch_id {
                ArchId::PhonemeSingle | ArchId::MlpBaseline => 32,
                ArchId::IrmasSingle | ArchId::IrmasMulti => 11,
                ArchId::MttProposed | ArchId::MttSmallRect => 50,
            };
            assert_eq!(table.rows.last().unwrap().output, vec![expected], "{}", spec.arch_id);
        }
        for a in ArchId::ALL {
            propagate_shapes(&miniature(a)).unwrap();
        }
    }

    #[test]
    fn phoneme_shapes_and_count() {
        let spec = build_phoneme_single();
        let t = propagate_shapes(&spec).unwrap();
        assert_eq!(t.row("branch0.conv").unwrap().output, vec![128, 31, 21]);
        assert_eq!(t.row("branch0.pool").unwrap().output, vec![128, 15, 1]);
        // branch5 is 32 filters of 70×10
        assert_eq!(t.row("branch5.conv").unwrap().output, vec![32, 11, 12]);
        assert_eq!(t.merged, vec![128 * 15 + 128 * 5 + 64 * 15 + 64 * 5 + 32 * 15 + 32 * 5]);
        assert_eq!(t.merged, vec![4480]);
        assert_eq!(t.row("head").unwrap().params, 143_392);
        let branch_params = 128 * 51 + 128 * 71 + 64 * 251 + 64 * 351 + 32 * 501 + 32 * 701;
        assert_eq!(param_count(&spec).unwrap(), branch_params + 143_392);
        assert_eq!(param_count(&spec).unwrap(), 236_000);
    }

    #[test]
    fn irmas_single_shapes() {
        let t = propagate_shapes(&build_irmas_single()).unwrap();
        for i in 0..6 {
            let conv = t.row(&format!("branch{i}.conv")).unwrap();
            assert_eq!(&conv.output[1..], &[96, 128]);
            assert_eq!(&t.row(&format!("branch{i}.pool")).unwrap().output[1..], &[1, 8]);
        }
        assert_eq!(t.merged, vec![448 * 8]);
        // conv weights + biases, 4 batch-norm vectors per channel, head
        let convs = 128 * 6 + 128 * 81 + 64 * 16 + 64 * 241 + 32 * 26 + 32 * 401;
        assert_eq!(t.total_params, convs + 4 * 448 + 3584 * 11 + 11);
    }

    #[test]
    fn irmas_multi_shapes_and_count() {
        let spec = build_irmas_multi();
        let t = propagate_shapes(&spec).unwrap();
        assert_eq!(t.merged, vec![448, 8, 8]);
        assert_eq!(t.row("trunk8.pool").unwrap().output, vec![128, 2, 2]);
        let count = param_count(&spec).unwrap();
        let convs = 128 * 6 + 128 * 81 + 64 * 16 + 64 * 241 + 32 * 26 + 32 * 401;
        let expected = convs
            + 4 * 448
            + (448 * 9 * 128 + 128)
            + 4 * 128
            + (128 * 9 * 128 + 128)
            + 4 * 128
            + (512 * 256 + 256)
            + (256 * 11 + 11);
        assert_eq!(count, expected);
        assert!((count as f64 - 743_000.0).abs() / 743_000.0 <= 0.15);
    }

    #[test]
    fn mtt_proposed_counts() {
        let k1 = build_mtt_proposed(1).unwrap();
        let t = propagate_shapes(&k1).unwrap();
        assert_eq!(t.merged, vec![22 + 35 + 35, 1, 46]);
        assert_eq!(t.row("branch0.conv").unwrap().output, vec![10, 29, 187]);
        let convs: usize = [(100, [10, 6, 3, 3]), (75, [15, 10, 5, 5]), (25, [15, 10, 5, 5])]
            .iter()
            .flat_map(|(m, c)| c.iter().zip([1, 3, 5, 7]).map(move |(c, n)| c * (m * n + 1)))
            .sum();
        let trunk = 92 * 8 * 32 + 32;
        let dense = 32 * 9 * 100 + 100;
        let head = 100 * 50 + 50;
        assert_eq!(t.total_params, convs + trunk + dense + head);
        assert_eq!(t.total_params, 74_526);
        assert_eq!(param_count(&build_mtt_proposed(2).unwrap()).unwrap(), 191_006);
        assert_eq!(param_count(&build_mtt_proposed(4).unwrap()).unwrap(), 565_278);
        assert!(build_mtt_proposed(3).is_err());
    }

    #[test]
    fn widening_increases_count() {
        let c: Vec<usize> = [1, 2, 4]
            .iter()
            .map(|&k| param_count(&build_mtt_proposed(k).unwrap()).unwrap())
            .collect();
        assert!(c[0] < c[1] && c[1] < c[2]);
    }

    #[test]
    fn small_rect_budget() {
        let spec = build_mtt_small_rect();
        let t = propagate_shapes(&spec).unwrap();
        let f = match spec.trunk[0] {
            LayerSpec::Conv { n_filters, .. } => n_filters,
            _ => unreachable!(),
        };
        assert_eq!(t.total_params, 36 * f * f + 84 * f + 50);
        assert!((t.total_params as f64 - 75_000.0).abs() / 75_000.0 <= 0.05);
        let convs = spec.trunk.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
        let pools = spec.trunk.iter().filter(|l| matches!(l, LayerSpec::MaxPool { .. })).count();
        assert_eq!((convs, pools), (5, 5));
        assert_eq!(t.merged, vec![1, 128, 187]);
        let last_pool = t.rows.iter().rfind(|r| r.name.ends_with(".pool")).unwrap();
        assert_eq!(&last_pool.output[1..], &[1, 1]);
        assert_eq!(spec.n_outputs(), 50);
    }

    #[test]
    fn mlp_budget_and_formula() {
        let input = InputShape::new(80, 21);
        let spec = build_mlp_baseline(input).unwrap();
        let count = param_count(&spec).unwrap();
        assert!((count as f64 - 481_000.0).abs() / 481_000.0 <= 0.10);
        for h in [3, 64, 245] {
            let d = 80 * 21;
            let c = param_count(&mlp_with_hidden(input, h, 32)).unwrap();
            assert_eq!(c, d * h + h * h + h * 32 + (h + h + 32));
        }
    }

    #[test]
    fn propagation_examples() {
        let mut spec = build_phoneme_single();
        spec.branches.truncate(1);
        spec.branches[0].filter_m = 90;
        match propagate_shapes(&spec) {
            Err(Error::ShapeUnderflow { index, layer, .. }) => {
                assert_eq!((index, layer.as_str()), (0, "branch0.conv"));
            }
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        for spec in full_size() {
            let back = ArchSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back, spec);
        }
    }
}
