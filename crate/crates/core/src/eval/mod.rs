//! SDR scoring, evaluation reports, experiment sweeps, the distribution
//! shift study, and file-level declipping.
//!
//! CSV outputs start with a `# config: <json>` line carrying the run
//! fingerprint, followed by a header row. An exact reconstruction has
//! infinite SDR and is written as `inf`.

mod declip;
mod shift;
mod sweep;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use declip::{declip_file, declip_signal};
pub use shift::{shift_experiment, ShiftReport, ShiftSetup};
pub use sweep::{sweep_gmax, sweep_subspace, CellStatus, SweepCell, SweepKind, SweepResult, SyntheticRun};

use crate::clip::{blend, saturation_mask, BlendConfig, BlendMode, ClipConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::models::{Arch, Network};
use crate::train::Checkpoint;

/// `20 log10(||x|| / ||x - xhat||)` in dB; `+inf` when `xhat == x`.
pub fn sdr(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::shapes("sdr", &[&[x.len()], &[xhat.len()]]));
    }
    let signal: f64 = x.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::ZeroReference);
    }
    let error: f64 = x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum();
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / error).log10())
}

/// SDR restricted to the samples that are saturated in `y`. `None` when no
/// sample is saturated or the reference is zero there.
pub fn saturated_sdr(x: &[f64], xhat: &[f64], y: &[f64], cfg: &ClipConfig) -> Option<f64> {
    let mask = saturation_mask(y, cfg);
    let (xs, hs): (Vec<f64>, Vec<f64>) = mask
        .flags()
        .iter()
        .zip(x.iter().zip(xhat))
        .filter(|(s, _)| **s)
        .map(|(_, (a, b))| (*a, *b))
        .unzip();
    if xs.is_empty() {
        return None;
    }
    sdr(&xs, &hs).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    pub per_item: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for fewer than two
    /// items.
    pub std: f64,
}

impl SdrReport {
    pub fn from_values(per_item: Vec<f64>) -> Self {
        let n = per_item.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            per_item.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else if mean.is_infinite() && per_item.iter().all(|&v| v == mean) {
            0.0
        } else {
            (per_item.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { per_item, mean, std }
    }
}

/// Everything needed to trace a number back to a reproducible run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: Option<u64>,
    pub arch: Arch,
    pub loss: Option<LossConfig>,
    pub epochs: usize,
    pub mu: f64,
    pub tau: f64,
    pub blend_mode: BlendMode,
    pub g_range: Option<(f64, f64)>,
    pub use_mask: bool,
}

impl Fingerprint {
    pub fn new(ck: &Checkpoint, mu: f64, blend: &BlendConfig) -> Self {
        let loss = ck.config.as_ref().map(|c| c.loss);
        Self {
            seed: ck.config.as_ref().map(|c| c.seed),
            arch: ck.arch.clone(),
            loss,
            epochs: ck.epochs_done,
            mu,
            tau: blend.tau,
            blend_mode: blend.mode,
            g_range: loss.and_then(|l| l.sampler).map(|s| (s.g_min, s.g_max)),
            use_mask: ck.arch.uses_mask(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fingerprint serializes")
    }
}

/// Model scores with the identity baseline (`xhat = y`) alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fingerprint: Fingerprint,
    pub metas: Vec<String>,
    pub model: SdrReport,
    pub identity: SdrReport,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "item,meta,model_sdr_db,identity_sdr_db";

    /// One row per item followed by `mean` and `std` rows.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# config: {}", self.fingerprint.to_json())?;
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (i, ((m, id), meta)) in self
            .model
            .per_item
            .iter()
            .zip(&self.identity.per_item)
            .zip(&self.metas)
            .enumerate()
        {
            writeln!(out, "{i},{},{m},{id}", csv_field(meta))?;
        }
        writeln!(out, "mean,,{},{}", self.model.mean, self.identity.mean)?;
        writeln!(out, "std,,{},{}", self.model.std, self.identity.std)?;
        Ok(())
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const EVAL_BATCH: usize = 16;

/// Blended reconstructions of `ys`, batched through the network.
pub fn reconstruct(ck: &Checkpoint, ys: &[&[f64]], cfg: &ClipConfig, bc: &BlendConfig) -> Result<Vec<Vec<f64>>> {
    bc.validate()?;
    let net = Network::new(&ck.arch, &ck.params);
    let mut out = Vec::with_capacity(ys.len());
    let mut start = 0;
    while start < ys.len() {
        let len = ys[start].len();
        let mut end = start + 1;
        while end < ys.len() && end - start < EVAL_BATCH && ys[end].len() == len {
            end += 1;
        }
        let raw = net.reconstruct(&ys[start..end], cfg)?;
        for (y, f) in ys[start..end].iter().zip(&raw) {
            out.push(blend(y, f, cfg, bc)?);
        }
        start = end;
    }
    Ok(out)
}

/// Scores a checkpoint on a test set carrying ground truth.
pub fn evaluate(ck: &Checkpoint, dataset: &Dataset, bc: &BlendConfig) -> Result<EvalReport> {
    if !dataset.has_ground_truth() {
        return Err(Error::InvalidConfig("evaluation needs ground-truth signals".into()));
    }
    let cfg = dataset.clip_config()?;
    let ys: Vec<&[f64]> = dataset.items.iter().map(|i| i.y.as_slice()).collect();
    let xhats = reconstruct(ck, &ys, &cfg, bc)?;
    let mut model = Vec::with_capacity(ys.len());
    let mut identity = Vec::with_capacity(ys.len());
    for (item, xhat) in dataset.items.iter().zip(&xhats) {
        let x = item.x.as_deref().expect("checked above");
        model.push(sdr(x, xhat)?);
        identity.push(sdr(x, &item.y)?);
    }
    Ok(EvalReport {
        fingerprint: Fingerprint::new(ck, dataset.mu, bc),
        metas: dataset.items.iter().map(|i| i.meta.clone()).collect(),
        model: SdrReport::from_values(model),
        identity: SdrReport::from_values(identity),
    })
}
