//! Audio frontend: PCM in, normalized log-mel spectrograms out.
//!
//! The pipeline is `load_wav → downmix → resample → stft_magnitude →
//! mel projection → log_compress`, followed by per-bin standardization
//! with statistics fitted on the training split.

mod featurize;
mod mel;
mod norm;
mod resample;
mod stft;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub use featurize::{featurize, featurize_buffer, Profile, ProfileParams};
pub use mel::{
    apply_filterbank, hz_to_mel, log_compress, mel_filterbank, mel_to_hz, MelConfig, MelScale,
    LOG_FLOOR,
};
pub use norm::{fit_norm_stats, normalize, NormStats, STD_FLOOR};
pub use resample::{resample, resample_channel, KAISER_BETA, TAPS_PER_PHASE};
pub use stft::{frame_count, hann_window, stft_magnitude, Grid, StftConfig, WindowKind};

use crate::error::{Error, Result};

/// Multi-channel PCM audio with samples scaled to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let Some(first) = channels.first() else {
            return Err(Error::invalid("audio needs at least one channel"));
        };
        if channels.iter().any(|c| c.len() != first.len()) {
            return Err(Error::invalid("channels have different lengths"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }
}

/// Reads a RIFF/WAVE file holding 16-bit integer or 32-bit float PCM.
pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| map_wav_error(path, e))?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Container {
            path: path.to_path_buf(),
            reason: "zero channels".into(),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{format:?} with {bits} bits per sample"),
            })
        }
    }
    .map_err(|e| map_wav_error(path, e))?;

    if interleaved.len() % n_channels != 0 {
        return Err(Error::TruncatedAudio {
            path: path.to_path_buf(),
        });
    }
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &s) in channels.iter_mut().zip(frame) {
            ch.push(s);
        }
    }
    AudioBuffer::new(channels, spec.sample_rate)
}

fn map_wav_error(path: &Path, err: hound::Error) -> Error {
    let path = path.to_path_buf();
    match err {
        // The reader signals a short data chunk with a custom error message.
        hound::Error::IoError(e)
            if e.kind() == std::io::ErrorKind::UnexpectedEof
                || e.to_string().contains("read enough bytes") =>
        {
            Error::TruncatedAudio { path }
        }
        hound::Error::IoError(source) => Error::Io { path, source },
        hound::Error::FormatError(reason) => Error::Container {
            path,
            reason: reason.to_string(),
        },
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path,
            detail: "format not supported by the WAVE reader".into(),
        },
        other => Error::UnsupportedEncoding {
            path,
            detail: other.to_string(),
        },
    }
}

/// Averages all channels into one.
pub fn downmix(buf: &AudioBuffer) -> AudioBuffer {
    if buf.n_channels() == 1 {
        return buf.clone();
    }
    let n = buf.n_channels() as f64;
    let mixed = (0..buf.len())
        .map(|i| (buf.channels.iter().map(|c| f64::from(c[i])).sum::<f64>() / n) as f32)
        .collect();
    AudioBuffer {
        channels: vec![mixed],
        sample_rate: buf.sample_rate,
    }
}

/// A log-mel spectrogram: `n_mels × n_frames` values stored mel-bin major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub values: Vec<f32>,
}

impl Spectrogram {
    pub fn new(
        n_mels: usize,
        n_frames: usize,
        sample_rate: u32,
        hop: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::shape(format!(
                "spectrogram {n_mels}×{n_frames} needs {} values, got {}",
                n_mels * n_frames,
                values.len()
            )));
        }
        Ok(Self {
            n_mels,
            n_frames,
            sample_rate,
            hop,
            values,
        })
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.values[mel * self.n_frames..(mel + 1) * self.n_frames]
    }

    /// Same metadata, different frame count and contents.
    pub(crate) fn with_frames(&self, n_frames: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), self.n_mels * n_frames);
        Self {
            n_mels: self.n_mels,
            n_frames,
            sample_rate: self.sample_rate,
            hop: self.hop,
            values,
        }
    }
}
