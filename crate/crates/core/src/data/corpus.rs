//! Procedural substitute corpora: polyphonic instrumental music and
//! speech-like vocalizations.
//!
//! The two kinds are built to differ in the ways that matter for a
//! train/test distribution shift. Music is sustained, harmonic, with
//! decaying partials and chords over a wide pitch range. Speech alternates
//! short voiced syllables (gliding pitch, formant-shaped spectrum) with
//! noisy fricatives and pauses.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::audio::{peak_normalize, write_wav};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Music,
    Speech,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "music" => Ok(Self::Music),
            "speech" => Ok(Self::Speech),
            other => Err(Error::InvalidConfig(format!("unknown corpus kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub kind: CorpusKind,
    pub num_files: usize,
    pub seconds_per_file: f64,
    pub sample_rate: u32,
    #[serde(default)]
    pub seed: u64,
}

impl CorpusSpec {
    /// Named, peak-normalized recordings.
    pub fn synthesize(&self) -> Result<Vec<(String, Vec<f64>)>> {
        if self.num_files == 0 || !(self.seconds_per_file > 0.0) || self.sample_rate < 1000 {
            return Err(Error::InvalidConfig(
                "corpus needs files, a positive duration and a sample rate >= 1000 Hz".into(),
            ));
        }
        let len = (self.seconds_per_file * self.sample_rate as f64).round() as usize;
        let sr = self.sample_rate as f64;
        let tag = match self.kind {
            CorpusKind::Music => "music",
            CorpusKind::Speech => "speech",
        };
        Ok((0..self.num_files)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(i as u64 + 1);
                let mut s = match self.kind {
                    CorpusKind::Music => music(len, sr, &mut rng),
                    CorpusKind::Speech => speech(len, sr, &mut rng),
                };
                peak_normalize(&mut s);
                (format!("{tag}-{i:04}"), s)
            })
            .collect())
    }

    /// Writes each recording as 16-bit WAV into `dir`, returning the paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, samples) in self.synthesize()? {
            let path = dir.join(format!("{name}.wav"));
            write_wav(&path, &samples, self.sample_rate)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn midi_to_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

/// Adds a harmonic tone with exponentially decaying partials.
#[allow(clippy::too_many_arguments)]
fn add_note(out: &mut [f64], sr: f64, start: usize, dur: usize, f0: f64, amp: f64, bright: f64, decay: f64) {
    let attack = (0.01 * sr) as usize + 1;
    let release = (0.05 * sr) as usize + 1;
    let end = (start + dur + release).min(out.len());
    let nyquist = 0.45 * sr;
    let partials: Vec<(f64, f64, f64)> = (1..=24)
        .map(|h| h as f64)
        .filter(|h| h * f0 < nyquist)
        .map(|h| {
            // inharmonic stretch and faster decay for upper partials
            let f = h * f0 * (1.0 + 2e-4 * h * h);
            (2.0 * PI * f / sr, bright.powf(h - 1.0) / h.sqrt(), decay / h.sqrt())
        })
        .collect();
    for (n, o) in out.iter_mut().enumerate().take(end).skip(start) {
        let t = (n - start) as f64;
        let env = if n - start < attack {
            t / attack as f64
        } else if n - start < dur {
            1.0
        } else {
            1.0 - (n - start - dur) as f64 / release as f64
        };
        let mut v = 0.0;
        for &(w, a, tau) in &partials {
            v += a * (-t / (tau * sr)).exp() * (w * t).sin();
        }
        *o += amp * env * v;
    }
}

fn music<R: Rng>(len: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let scale = [0, 2, 4, 5, 7, 9, 11];
    let root = rng.gen_range(36..48) as f64;
    let bright = rng.gen_range(0.35..0.75);
    let decay = rng.gen_range(0.3..1.5);
    let mut t = 0usize;
    let mut phrase_gain = rng.gen_range(0.3..1.0);
    while t < len {
        if rng.gen_bool(0.15) {
            phrase_gain = rng.gen_range(0.2..1.0);
        }
        let dur = (rng.gen_range(0.12..0.7) * sr) as usize;
        let voices = rng.gen_range(1..=3);
        for _ in 0..voices {
            let degree = rng.gen_range(0..14);
            let m = root + 12.0 * (degree / 7) as f64 + scale[degree % 7] as f64 + 12.0 * rng.gen_range(0..3) as f64;
            let amp = phrase_gain * rng.gen_range(0.4..1.0) / voices as f64;
            add_note(&mut out, sr, t, dur, midi_to_hz(m), amp, bright, decay);
        }
        // accented onsets: short loud transient on some notes
        if rng.gen_bool(0.2) {
            add_note(&mut out, sr, t, (0.03 * sr) as usize, midi_to_hz(root + 24.0), 2.0 * phrase_gain, 0.8, 0.05);
        }
        t += (dur as f64 * rng.gen_range(0.6..1.0)) as usize + 1;
    }
    out
}

/// Resonance gain of a formant at `centre` with bandwidth `bw`.
fn formant(f: f64, centre: f64, bw: f64) -> f64 {
    let x = (f - centre) / bw;
    1.0 / (1.0 + x * x)
}

const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

fn speech<R: Rng>(len: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let pitch = rng.gen_range(95.0..230.0);
    let nyquist = 0.45 * sr;
    let mut t = 0usize;
    while t < len {
        if rng.gen_bool(0.4) {
            let n = (rng.gen_range(0.04..0.12) * sr) as usize;
            let amp = rng.gen_range(0.05..0.25);
            let mut prev = 0.0;
            for s in out.iter_mut().skip(t).take(n) {
                let w: f64 = rng.sample(StandardNormal);
                *s += amp * (w - 0.9 * prev);
                prev = w;
            }
            t += n;
        }
        let n = (rng.gen_range(0.08..0.3) * sr) as usize;
        let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
        let next = VOWELS[rng.gen_range(0..VOWELS.len())];
        let f_start = pitch * rng.gen_range(0.85..1.2);
        let f_end = pitch * rng.gen_range(0.75..1.1);
        let amp = rng.gen_range(0.3..1.0);
        let mut phase = 0.0;
        for k in 0..n.min(len.saturating_sub(t)) {
            let a = k as f64 / n as f64;
            let f0 = f_start + (f_end - f_start) * a + 3.0 * (2.0 * PI * 5.5 * k as f64 / sr).sin();
            phase += 2.0 * PI * f0 / sr;
            let env = (PI * a).sin().powf(0.6);
            let mut v = 0.0;
            let mut h = 1.0;
            while h * f0 < nyquist {
                let f = h * f0;
                let shape: f64 = (0..3)
                    .map(|j| {
                        let c = vowel[j] + (next[j] - vowel[j]) * a;
                        formant(f, c, 60.0 + 40.0 * j as f64) / (1.0 + j as f64)
                    })
                    .sum();
                v += shape / h * (h * phase).sin();
                h += 1.0;
            }
            out[t + k] += amp * env * v;
        }
        t += n;
        if rng.gen_bool(0.3) {
            t += (rng.gen_range(0.05..0.35) * sr) as usize;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: CorpusKind) -> CorpusSpec {
        CorpusSpec {
            kind,
            num_files: 2,
            seconds_per_file: 1.0,
            sample_rate: 8000,
            seed: 4,
        }
    }

    #[test]
    fn deterministic_and_normalized() {
        for kind in [CorpusKind::Music, CorpusKind::Speech] {
            let a = spec(kind).synthesize().unwrap();
            assert_eq!(a, spec(kind).synthesize().unwrap());
            assert_eq!(a.len(), 2);
            assert_ne!(a[0].1, a[1].1);
            for (_, s) in &a {
                assert_eq!(s.len(), 8000);
                let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!((peak - 1.0).abs() < 1e-12);
            }
        }
    }

    /// Speech spends a larger share of its samples near silence.
    #[test]
    fn kinds_differ_in_level_statistics() {
        let quiet = |kind| {
            let s = CorpusSpec { num_files: 4, ..spec(kind) }.synthesize().unwrap();
            let all: Vec<f64> = s.into_iter().flat_map(|(_, v)| v).collect();
            all.iter().filter(|v| v.abs() < 0.02).count() as f64 / all.len() as f64
        };
        assert!(quiet(CorpusKind::Speech) > quiet(CorpusKind::Music));
    }
}
