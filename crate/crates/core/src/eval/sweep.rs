use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport};
use crate::clip::BlendConfig;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::models::{Arch, MlpArch};
use crate::train::{train, TrainConfig, TrainOptions};

/// One synthetic experiment: data, network, objective and test-time
/// blending. Sweeps vary the subspace dimension, clip proportion or gain
/// range of a base run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRun {
    pub data: SyntheticSpec,
    /// `input_dim` and `in_channels` are overwritten from the data and the
    /// training config.
    pub arch: MlpArch,
    pub train: TrainConfig,
    #[serde(default)]
    pub blend: BlendConfig,
}

impl SyntheticRun {
    pub fn arch(&self) -> Arch {
        Arch::Mlp(MlpArch {
            input_dim: self.data.ambient_dim,
            in_channels: if self.train.use_mask_channel { 2 } else { 1 },
            ..self.arch.clone()
        })
    }

    /// Generates the data, trains, and evaluates on the held-out signals.
    pub fn run(&self, checkpoint: Option<&Path>) -> Result<EvalReport> {
        let (train_set, test_set) = self.data.generate()?;
        let train_set = if self.train.loss.kind == LossKind::Supervised {
            train_set
        } else {
            train_set.measurements_only()
        };
        let outcome = train(&self.train, &train_set, &self.arch(), TrainOptions::default())?;
        if let Some(path) = checkpoint {
            outcome.checkpoint.save(path)?;
        }
        evaluate(&outcome.checkpoint, &test_set, &self.blend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Subspace,
    Gmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellStatus {
    Ok {
        model_mean: f64,
        model_std: f64,
        identity_mean: f64,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub d: usize,
    pub v: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub status: CellStatus,
}

impl SweepCell {
    pub fn model_mean(&self) -> Option<f64> {
        match self.status {
            CellStatus::Ok { model_mean, .. } => Some(model_mean),
            CellStatus::Failed(_) => None,
        }
    }

    pub fn identity_mean(&self) -> Option<f64> {
        match self.status {
            CellStatus::Ok { identity_mean, .. } => Some(identity_mean),
            CellStatus::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub base: SyntheticRun,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str = "d,v,g_min,g_max,model_mean_db,model_std_db,identity_mean_db,status";

    pub fn cell(&self, d: usize, v: f64, g_max: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.d == d && c.v == v && c.g_max == g_max)
    }

    /// One row per cell; failed cells leave the numeric columns empty and
    /// carry the error in `status`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# config: {}", serde_json::to_string(&self.base)?)?;
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.cells {
            match &c.status {
                CellStatus::Ok {
                    model_mean,
                    model_std,
                    identity_mean,
                } => writeln!(
                    out,
                    "{},{},{},{},{model_mean},{model_std},{identity_mean},ok",
                    c.d, c.v, c.g_min, c.g_max
                )?,
                CellStatus::Failed(e) => writeln!(
                    out,
                    "{},{},{},{},,,,{}",
                    c.d,
                    c.v,
                    c.g_min,
                    c.g_max,
                    super::csv_field(&format!("failed: {e}"))
                )?,
            }
        }
        Ok(())
    }
}

fn run_cell(run: &SyntheticRun, dir: Option<&Path>, on_cell: &dyn Fn(&SweepCell)) -> Result<SweepCell> {
    let sampler = run.train.loss.sampler;
    let checkpoint = match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(dir.join(format!(
                "d{}_v{}_g{}.ckpt",
                run.data.subspace_dim,
                run.data.clip_proportion,
                sampler.map_or(0.0, |s| s.g_max)
            )))
        }
        None => None,
    };
    let status = match run.run(checkpoint.as_deref()) {
        Ok(report) => CellStatus::Ok {
            model_mean: report.model.mean,
            model_std: report.model.std,
            identity_mean: report.identity.mean,
        },
        Err(e @ Error::Io(_)) => return Err(e),
        Err(e) => CellStatus::Failed(e.to_string()),
    };
    let cell = SweepCell {
        d: run.data.subspace_dim,
        v: run.data.clip_proportion,
        g_min: sampler.map_or(f64::NAN, |s| s.g_min),
        g_max: sampler.map_or(f64::NAN, |s| s.g_max),
        status,
    };
    on_cell(&cell);
    Ok(cell)
}

fn dedup<T: PartialEq + Copy>(values: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(values.len());
    for &v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// One run per `(d, v)` pair, each on freshly generated data. Training
/// failures such as a non-finite loss are recorded in the cell and the
/// sweep continues.
pub fn sweep_subspace(
    base: &SyntheticRun,
    ds: &[usize],
    vs: &[f64],
    checkpoint_dir: Option<&Path>,
    on_cell: &dyn Fn(&SweepCell),
) -> Result<SweepResult> {
    let mut cells = Vec::new();
    for &d in &dedup(ds) {
        for &v in &dedup(vs) {
            let mut run = base.clone();
            run.data.subspace_dim = d;
            run.data.clip_proportion = v;
            cells.push(run_cell(&run, checkpoint_dir, on_cell)?);
        }
    }
    Ok(SweepResult {
        kind: SweepKind::Subspace,
        base: base.clone(),
        cells,
    })
}

/// One run per upper gain bound, with `g_min` and the data fixed by `base`.
pub fn sweep_gmax(
    base: &SyntheticRun,
    g_maxes: &[f64],
    checkpoint_dir: Option<&Path>,
    on_cell: &dyn Fn(&SweepCell),
) -> Result<SweepResult> {
    let Some(sampler) = base.train.loss.sampler else {
        return Err(Error::InvalidConfig("g_max sweep needs a gain sampler in the loss".into()));
    };
    let mut cells = Vec::new();
    for &g_max in &dedup(g_maxes) {
        let mut run = base.clone();
        run.train.loss.sampler = Some(crate::losses::GroupSampler { g_max, ..sampler });
        cells.push(run_cell(&run, checkpoint_dir, on_cell)?);
    }
    Ok(SweepResult {
        kind: SweepKind::Gmax,
        base: base.clone(),
        cells,
    })
}
