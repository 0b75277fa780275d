use std::path::Path;

use crate::clip::{clip, BlendConfig, ClipConfig};
use crate::data::{load_audio, write_wav};
use crate::error::{Error, Result};
use crate::train::Checkpoint;

use super::reconstruct;

/// Declips `signal` window by window. The output covers the whole windows
/// only; a trailing partial window is dropped.
pub fn declip_signal(
    signal: &[f64],
    window_len: usize,
    ck: &Checkpoint,
    cfg: &ClipConfig,
    bc: &BlendConfig,
) -> Result<Vec<f64>> {
    if window_len == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if let Some(n) = ck.arch.signal_len() {
        if n != window_len {
            return Err(Error::ArchMismatch(format!(
                "checkpoint expects windows of {n} samples, got {window_len}"
            )));
        }
    }
    let windows: Vec<Vec<f64>> = signal.chunks_exact(window_len).map(|w| clip(w, cfg)).collect();
    let ys: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
    Ok(reconstruct(ck, &ys, cfg, bc)?.concat())
}

/// Reads a WAV, declips it and writes a 16-bit mono WAV at the same rate.
/// `window_len` defaults to the checkpoint's fixed input length, or one
/// second of audio for length-agnostic networks.
pub fn declip_file(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    ck: &Checkpoint,
    cfg: &ClipConfig,
    bc: &BlendConfig,
    window_len: Option<usize>,
) -> Result<usize> {
    let audio = load_audio(input)?;
    let window = window_len
        .or(ck.arch.signal_len())
        .unwrap_or(audio.sample_rate as usize);
    let out = declip_signal(&audio.samples, window, ck, cfg, bc)?;
    write_wav(output, &out, audio.sample_rate)?;
    Ok(out.len())
}
