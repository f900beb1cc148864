use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::invalid("hop must be at least 1"));
        }
        if self.window_length == 0 {
            return Err(Error::invalid("window length must be at least 1"));
        }
        if self.fft_size < self.window_length {
            return Err(Error::invalid(format!(
                "fft size {} is shorter than the window ({})",
                self.fft_size, self.window_length
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "fft size {} is not a power of two",
                self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Row-major 2-D grid of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// Number of full frames: `floor((len - window) / hop) + 1`, or 0 if the signal is too short.
pub fn frame_count(len: usize, window_length: usize, hop: usize) -> usize {
    if len < window_length || hop == 0 {
        0
    } else {
        (len - window_length) / hop + 1
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Magnitude STFT, `(fft_size/2 + 1) × n_frames`. Frames start at `k·hop`;
/// each is windowed and zero-padded at the end up to `fft_size`.
pub fn stft_magnitude(samples: &[f32], cfg: &StftConfig) -> Result<Grid> {
    cfg.validate()?;
    let n_frames = frame_count(samples.len(), cfg.window_length, cfg.hop);
    if n_frames == 0 {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one window ({})",
            samples.len(),
            cfg.window_length
        )));
    }
    let window = match cfg.window {
        WindowKind::Hann => hann_window(cfg.window_length),
    };
    let n_bins = cfg.n_bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Grid::zeros(n_bins, n_frames);

    for t in 0..n_frames {
        let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.window_length];
        for (slot, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(f64::from(x) * w, 0.0);
        }
        buf[cfg.window_length..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, z) in buf.iter().take(n_bins).enumerate() {
            out.values[k * n_frames + t] = z.norm() as f32;
        }
    }
    Ok(out)
}
