use crate::nn::Tensor;

/// Binary PGM (P5, maxval 255) of a `height × width` grid, min-max scaled
/// to 0–255. A constant grid maps to mid-gray 128.
pub fn encode_pgm(values: &[f32], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width, "grid size");
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    }));
    out
}

/// One image per filter of a `F×C×m×n` conv weight. Channels of a filter are
/// stacked vertically, so each image is `n` wide and `C·m` high.
pub fn filter_images(weight: &Tensor<f32>) -> Vec<Vec<u8>> {
    let [f, c, m, n] = *weight.shape() else {
        panic!("conv weight must be 4-d, got {:?}", weight.shape());
    };
    (0..f)
        .map(|i| encode_pgm(&weight.data()[i * c * m * n..(i + 1) * c * m * n], c * m, n))
        .collect()
}
