use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Spectrogram;
use crate::nn::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "seed")]
pub enum SlicePolicy {
    Center,
    /// Uniformly placed crop, for augmentation.
    Random(u64),
    /// Consecutive non-overlapping windows covering the whole input.
    Tile,
}

/// Window of `target` frames starting at `start` (may be negative or run past
/// the end); frames outside the input are zero.
pub fn slice_at(spec: &Spectrogram, start: isize, target: usize) -> Spectrogram {
    let mut out = vec![0.0f32; spec.n_mels * target];
    let lo = start.max(0) as usize;
    let hi = (start + target as isize).clamp(0, spec.n_frames as isize) as usize;
    if lo < hi {
        let dst = (lo as isize - start) as usize;
        for m in 0..spec.n_mels {
            out[m * target + dst..m * target + dst + (hi - lo)].copy_from_slice(&spec.row(m)[lo..hi]);
        }
    }
    spec.with_frames(target, out)
}

/// Cuts `target`-frame excerpts out of `spec`.
///
/// Inputs shorter than `target` are zero-padded symmetrically (the extra
/// frame on the trailing side) under every policy. `Tile` zero-pads its last
/// window at the end.
pub fn slice_excerpt(spec: &Spectrogram, target: usize, policy: SlicePolicy) -> Vec<Spectrogram> {
    assert!(target >= 1, "excerpt length must be at least one frame");
    let t = spec.n_frames;
    if t <= target {
        let front = (target - t) / 2;
        return vec![slice_at(spec, -(front as isize), target)];
    }
    match policy {
        SlicePolicy::Center => vec![slice_at(spec, ((t - target) / 2) as isize, target)],
        SlicePolicy::Random(seed) => {
            let start = rng_from_seed(seed).random_range(0..=t - target);
            vec![slice_at(spec, start as isize, target)]
        }
        SlicePolicy::Tile => (0..t.div_ceil(target))
            .map(|w| slice_at(spec, (w * target) as isize, target))
            .collect(),
    }
}
