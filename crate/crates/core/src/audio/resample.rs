//! Polyphase windowed-sinc sample-rate conversion.
//!
//! The conversion ratio is reduced to `up/down`. Output sample `k` sits at
//! input position `k·down/up`; its fractional part selects one of `up`
//! precomputed phases, each holding `TAPS_PER_PHASE` Kaiser-windowed sinc
//! coefficients. Every phase is normalized to unit DC gain.

use super::AudioBuffer;
use crate::error::{Error, Result};

pub const TAPS_PER_PHASE: usize = 32;
pub const KAISER_BETA: f64 = 8.6;

const HALF: isize = (TAPS_PER_PHASE / 2) as isize;

/// Resamples every channel of `buf` to `target_sr`.
pub fn resample(buf: &AudioBuffer, target_sr: u32) -> Result<AudioBuffer> {
    if target_sr == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    if target_sr == buf.sample_rate() {
        return Ok(buf.clone());
    }
    let channels = buf
        .channels()
        .iter()
        .map(|c| resample_channel(c, buf.sample_rate(), target_sr))
        .collect::<Result<Vec<_>>>()?;
    AudioBuffer::new(channels, target_sr)
}

/// Resamples one channel. Output length is `round(len · to / from)`.
pub fn resample_channel(samples: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    if from == 0 || to == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    if from == to {
        return Ok(samples.to_vec());
    }
    let g = gcd(from as u64, to as u64);
    let up = to as u64 / g;
    let down = from as u64 / g;
    let len = samples.len() as u64;
    let out_len = ((2 * len * to as u64 + from as u64) / (2 * from as u64)) as usize;

    let table = PhaseTable::new(up as usize, down as usize);
    let n = samples.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for k in 0..out_len as u64 {
        let pos = k * down;
        let base = (pos / up) as isize;
        let taps = table.phase((pos % up) as usize);
        let start = base - HALF + 1;
        let mut acc = 0.0f64;
        if start >= 0 && start + TAPS_PER_PHASE as isize <= n {
            let window = &samples[start as usize..start as usize + TAPS_PER_PHASE];
            for (&x, &h) in window.iter().zip(taps) {
                acc += f64::from(x) * h;
            }
        } else {
            for (j, &h) in taps.iter().enumerate() {
                let idx = start + j as isize;
                if (0..n).contains(&idx) {
                    acc += f64::from(samples[idx as usize]) * h;
                }
            }
        }
        out.push(acc as f32);
    }
    Ok(out)
}

struct PhaseTable {
    coeffs: Vec<f64>,
}

impl PhaseTable {
    fn new(up: usize, down: usize) -> Self {
        // Cutoff relative to the input Nyquist frequency.
        let cutoff = (up as f64 / down as f64).min(1.0);
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut coeffs = Vec::with_capacity(up * TAPS_PER_PHASE);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let start = coeffs.len();
            for j in 0..TAPS_PER_PHASE {
                // Distance from output position to input tap, in input samples.
                let d = (j as isize - HALF + 1) as f64 - frac;
                let x = d / HALF as f64;
                let window = if x.abs() <= 1.0 {
                    bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / i0_beta
                } else {
                    0.0
                };
                coeffs.push(cutoff * sinc(cutoff * d) * window);
            }
            let sum: f64 = coeffs[start..].iter().sum();
            coeffs[start..].iter_mut().for_each(|c| *c /= sum);
        }
        Self { coeffs }
    }

    fn phase(&self, p: usize) -> &[f64] {
        &self.coeffs[p * TAPS_PER_PHASE..(p + 1) * TAPS_PER_PHASE]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
