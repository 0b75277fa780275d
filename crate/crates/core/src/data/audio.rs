//! WAV ingestion, windowing and per-file train/test splitting.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{filter_saturated, Dataset, Item, Split};
use crate::clip::{clip, ClipConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn audio_err(path: &Path, reason: impl ToString) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads a PCM WAV file (integer or 32-bit float), averaging channels to
/// mono. Integer samples are scaled by `2^(bits-1)`.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(audio_err(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        (hound::SampleFormat::Int, bits @ 1..=32) => {
            let scale = 2f64.powi(bits as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(path, e))?
        }
        (format, bits) => {
            return Err(audio_err(path, format!("unsupported sample format {format:?} with {bits} bits")))
        }
    };
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioSignal {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM, rounding `x · 32768` and saturating at the
/// integer range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v).map_err(|e| audio_err(path, e))?;
    }
    writer.finalize().map_err(|e| audio_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSpec {
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_window")]
    pub window_seconds: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Fraction of files held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rate() -> u32 {
    22050
}
fn default_window() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}
fn default_test_fraction() -> f64 {
    0.1
}

impl Default for AudioSpec {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            sample_rate: default_rate(),
            window_seconds: default_window(),
            mu: default_mu(),
            normalize: true,
            test_fraction: default_test_fraction(),
            seed: 0,
        }
    }
}

impl AudioSpec {
    pub fn window_len(&self) -> usize {
        (self.sample_rate as f64 * self.window_seconds).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        ClipConfig::new(self.mu)?;
        if self.window_len() == 0 {
            return Err(Error::InvalidConfig("window must contain at least one sample".into()));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in [0, 1], got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// Brings a decoded file to the target rate (integer-factor decimation
    /// with a box pre-filter) and applies peak normalization if enabled.
    pub fn prepare(&self, signal: &AudioSignal, path: &Path) -> Result<Vec<f64>> {
        let mut samples = if signal.sample_rate == self.sample_rate {
            signal.samples.clone()
        } else if signal.sample_rate > self.sample_rate && signal.sample_rate % self.sample_rate == 0 {
            let factor = (signal.sample_rate / self.sample_rate) as usize;
            signal
                .samples
                .chunks_exact(factor)
                .map(|c| c.iter().sum::<f64>() / factor as f64)
                .collect()
        } else {
            return Err(audio_err(
                path,
                format!(
                    "sample rate {} is not an integer multiple of {}",
                    signal.sample_rate, self.sample_rate
                ),
            ));
        };
        if self.normalize {
            peak_normalize(&mut samples);
        }
        Ok(samples)
    }

    /// Loads every file in `paths` and splits them.
    pub fn build(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let mut named = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            let signal = load_audio(path)?;
            named.push((path.display().to_string(), self.prepare(&signal, path)?));
        }
        self.build_from_signals(named)
    }

    /// Splits whole recordings into train and test (so no two windows of one
    /// recording land on different sides), windows and clips them, and drops
    /// windows without a saturated sample. Signals must already be at
    /// `sample_rate` and normalized as desired.
    pub fn build_from_signals(&self, mut named: Vec<(String, Vec<f64>)>) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let cfg = ClipConfig::new(self.mu)?;
        named.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let n_test = if named.len() < 2 {
            0
        } else {
            ((self.test_fraction * named.len() as f64).round() as usize).clamp(1, named.len() - 1)
        };
        let (test_files, train_files) = named.split_at(n_test);
        let provenance = serde_json::to_string(self)?;
        let make = |files: &[(String, Vec<f64>)], split: Split| -> Dataset {
            let mut items = Vec::new();
            for (name, samples) in files {
                for (i, (x, y)) in window_and_clip(samples, self.window_len(), &cfg).into_iter().enumerate() {
                    items.push(Item {
                        x: Some(x),
                        y,
                        meta: format!("{name}#{i}"),
                    });
                }
            }
            Dataset {
                mu: self.mu,
                split,
                provenance: provenance.clone(),
                items: filter_saturated(items, &cfg),
            }
        };
        Ok((make(train_files, Split::Train), make(test_files, Split::Test)))
    }
}

/// Scales so that the largest magnitude is 1; silent signals are untouched.
pub fn peak_normalize(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
}

/// Non-overlapping windows of `window_len` samples, each paired with its
/// clipped version. A trailing partial window is dropped.
pub fn window_and_clip(signal: &[f64], window_len: usize, cfg: &ClipConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    if window_len == 0 {
        return Vec::new();
    }
    signal
        .chunks_exact(window_len)
        .map(|w| (w.to_vec(), clip(w, cfg)))
        .collect()
}
