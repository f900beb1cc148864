use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    apply_filterbank, downmix, load_wav, log_compress, mel_filterbank, resample, stft_magnitude,
    AudioBuffer, MelConfig, MelScale, Spectrogram, StftConfig, WindowKind,
};
use crate::error::{Error, Result};

/// Feature extraction presets, one per experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 44.1 kHz, 25 ms window zero-padded to 2048, 10 ms hop, 80 mels.
    Phoneme44k,
    /// 12 kHz, 512-point FFT, hop 256, 96 mels.
    Irmas12k,
    /// 16 kHz, 512-point FFT, hop 256, 128 mels.
    Mtt16k,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileParams {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub mel: MelConfig,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Phoneme44k, Profile::Irmas12k, Profile::Mtt16k];

    pub fn params(self) -> ProfileParams {
        let (sample_rate, window_length, fft_size, hop, n_mels, f_min) = match self {
            Profile::Phoneme44k => (44_100, 1102, 2048, 441, 80, 0.0),
            Profile::Irmas12k => (12_000, 512, 512, 256, 96, 0.0),
            // With f_min = 0 the lowest HTK triangle falls between FFT bins 0 and 1.
            Profile::Mtt16k => (16_000, 512, 512, 256, 128, 150.0),
        };
        ProfileParams {
            sample_rate,
            stft: StftConfig {
                window_length,
                fft_size,
                hop,
                window: WindowKind::Hann,
            },
            mel: MelConfig {
                n_mels,
                f_min,
                f_max: f64::from(sample_rate) / 2.0,
                scale: MelScale::Htk,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Phoneme44k => "phoneme44k",
            Profile::Irmas12k => "irmas12k",
            Profile::Mtt16k => "mtt16k",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown profile `{s}`")))
    }
}

/// Reads an audio file and returns its log-mel spectrogram under `profile`.
pub fn featurize(path: &Path, profile: Profile) -> Result<Spectrogram> {
    featurize_buffer(&load_wav(path)?, profile)
}

/// Downmix → resample → magnitude STFT → mel projection → log.
pub fn featurize_buffer(buf: &AudioBuffer, profile: Profile) -> Result<Spectrogram> {
    let p = profile.params();
    let mono = resample(&downmix(buf), p.sample_rate)?;
    let mags = stft_magnitude(&mono.channels()[0], &p.stft)?;
    let fb = mel_filterbank(&p.mel, p.stft.fft_size, p.sample_rate)?;
    let logmel = log_compress(&apply_filterbank(&fb, &mags)?);
    Spectrogram::new(
        logmel.rows,
        logmel.cols,
        p.sample_rate,
        p.stft.hop,
        logmel.values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::LOG_FLOOR;

    #[test]
    fn every_profile_has_a_valid_filterbank() {
        for p in Profile::ALL {
            let pp = p.params();
            pp.stft.validate().unwrap();
            mel_filterbank(&pp.mel, pp.stft.fft_size, pp.sample_rate).unwrap();
        }
    }

    #[test]
    fn irmas_three_seconds_shape() {
        let buf = AudioBuffer::mono(vec![0.0; 36_000], 12_000).unwrap();
        let s = featurize_buffer(&buf, Profile::Irmas12k).unwrap();
        assert_eq!((s.n_mels, s.n_frames), (96, (36_000 - 512) / 256 + 1));
        // floor(35488 / 256) + 1
        assert_eq!(s.n_frames, 139);
    }

    #[test]
    fn phoneme_one_second_shape() {
        let buf = AudioBuffer::mono(vec![0.0; 44_100], 44_100).unwrap();
        let s = featurize_buffer(&buf, Profile::Phoneme44k).unwrap();
        assert_eq!((s.n_mels, s.n_frames), (80, 98));
    }

    #[test]
    fn silence_is_log_floor() {
        let buf = AudioBuffer::new(vec![vec![0.0; 20_000]; 2], 16_000).unwrap();
        let s = featurize_buffer(&buf, Profile::Mtt16k).unwrap();
        assert_eq!(s.n_mels, 128);
        assert!(s.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn resamples_to_profile_rate() {
        let x: Vec<f32> = (0..44_100).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
        let buf = AudioBuffer::mono(x, 44_100).unwrap();
        let s = featurize_buffer(&buf, Profile::Mtt16k).unwrap();
        assert_eq!(s.sample_rate, 16_000);
        assert_eq!(s.n_frames, (16_000 - 512) / 256 + 1);
        assert!(s.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn profile_names_round_trip() {
        for p in Profile::ALL {
            assert_eq!(p.name().parse::<Profile>().unwrap(), p);
        }
        assert!("foo".parse::<Profile>().is_err());
    }
}
