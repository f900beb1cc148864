use serde::{Deserialize, Serialize};

use super::stft::Grid;
use crate::error::{Error, Result};
use crate::nn::matmul;

/// Smallest value passed to the logarithm.
pub const LOG_FLOOR: f32 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MelScale {
    Htk,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub scale: MelScale,
}

/// HTK mel scale: `2595·log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels × (fft_size/2 + 1)`.
///
/// Filter edges are `n_mels + 2` points spaced uniformly on the mel scale
/// between `f_min` and `f_max`. Each triangle is sampled at the FFT bin
/// frequencies and the row is rescaled so its largest weight is exactly 1.
/// A filter that covers no FFT bin is an error.
pub fn mel_filterbank(cfg: &MelConfig, fft_size: usize, sample_rate: u32) -> Result<Grid> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if cfg.n_mels == 0 {
        return Err(Error::Filterbank("n_mels must be at least 1".into()));
    }
    if !(0.0 <= cfg.f_min && cfg.f_min < cfg.f_max && cfg.f_max <= nyquist) {
        return Err(Error::Filterbank(format!(
            "need 0 <= f_min < f_max <= {nyquist}, got f_min={} f_max={}",
            cfg.f_min, cfg.f_max
        )));
    }
    if fft_size < 2 {
        return Err(Error::Filterbank("fft size must be at least 2".into()));
    }

    let n_bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / fft_size as f64;

    let mut fb = Grid::zeros(cfg.n_mels, n_bins);
    for (i, e) in edges.windows(3).enumerate() {
        let (left, center, right) = (e[0], e[1], e[2]);
        let row = &mut fb.values[i * n_bins..(i + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            *w = rising.min(falling).max(0.0) as f32;
        }
        let peak = row.iter().fold(0.0f32, |m, &v| m.max(v));
        if peak <= 0.0 {
            return Err(Error::Filterbank(format!(
                "filter {i} ({left:.1}–{right:.1} Hz) covers no FFT bin; \
                 n_mels={} is too many for a {fft_size}-point FFT at {sample_rate} Hz",
                cfg.n_mels
            )));
        }
        row.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(fb)
}

/// Projects a linear magnitude grid (`bins × frames`) through a filterbank (`mels × bins`).
pub fn apply_filterbank(fb: &Grid, magnitudes: &Grid) -> Result<Grid> {
    if fb.cols != magnitudes.rows {
        return Err(Error::shape(format!(
            "filterbank expects {} bins, spectrum has {}",
            fb.cols, magnitudes.rows
        )));
    }
    let mut out = Grid::zeros(fb.rows, magnitudes.cols);
    matmul(
        &fb.values,
        &magnitudes.values,
        &mut out.values,
        fb.rows,
        fb.cols,
        magnitudes.cols,
    );
    Ok(out)
}

/// Elementwise `ln(max(x, 1e-10))`.
pub fn log_compress(grid: &Grid) -> Grid {
    Grid {
        rows: grid.rows,
        cols: grid.cols,
        values: grid.values.iter().map(|&x| x.max(LOG_FLOOR).ln()).collect(),
    }
}
