use serde::{Deserialize, Serialize};

use super::Spectrogram;
use crate::error::{Error, Result};

pub const STD_FLOOR: f32 = 1e-8;

/// Per-mel-bin standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn n_mels(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }
}

/// Mean and population standard deviation per mel bin, pooled over every
/// frame of every spectrogram.
pub fn fit_norm_stats<'a, I>(spectrograms: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut iter = spectrograms.into_iter().peekable();
    let n_mels = iter
        .peek()
        .map(|s| s.n_mels)
        .ok_or_else(|| Error::Empty("no spectrograms to fit normalization on".into()))?;
    let mut sum = vec![0.0f64; n_mels];
    let mut sum_sq = vec![0.0f64; n_mels];
    let mut count = 0usize;
    for spec in iter {
        if spec.n_mels != n_mels {
            return Err(Error::shape(format!(
                "spectrogram has {} mel bins, expected {n_mels}",
                spec.n_mels
            )));
        }
        for m in 0..n_mels {
            for &v in spec.row(m) {
                let v = f64::from(v);
                sum[m] += v;
                sum_sq[m] += v * v;
            }
        }
        count += spec.n_frames;
    }
    if count == 0 {
        return Err(Error::Empty("spectrograms have no frames".into()));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| ((sq / n - mu * mu).max(0.0).sqrt() as f32).max(STD_FLOOR))
        .collect();
    Ok(NormStats {
        mean: mean.into_iter().map(|m| m as f32).collect(),
        std,
    })
}

/// `(x - mean) / std` per mel bin.
pub fn normalize(spec: &Spectrogram, stats: &NormStats) -> Result<Spectrogram> {
    if stats.n_mels() != spec.n_mels || stats.std.len() != spec.n_mels {
        return Err(Error::shape(format!(
            "normalization stats cover {} bins, spectrogram has {}",
            stats.n_mels(),
            spec.n_mels
        )));
    }
    let mut values = spec.values.clone();
    for (m, row) in values.chunks_mut(spec.n_frames.max(1)).enumerate() {
        let (mu, sd) = (stats.mean[m], stats.std[m]);
        row.iter_mut().for_each(|v| *v = (*v - mu) / sd);
    }
    Ok(spec.with_frames(spec.n_frames, values))
}
