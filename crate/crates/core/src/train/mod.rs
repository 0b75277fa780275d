//! Mini-batch Adam training for every objective, with deterministic
//! shuffling, periodic checkpoints, resumption and a per-epoch log.
//!
//! Epoch `e` draws its shuffle and its gains from a ChaCha8 stream seeded
//! with `seed` on stream `e + 1`, so a run resumed from a checkpoint
//! continues exactly as the uninterrupted run would have.

mod adam;
mod checkpoint;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;

use crate::autodiff::Graph;
use crate::clip::BlendConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::losses::{total_loss, LossConfig};
use crate::models::{Arch, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub use_mask_channel: bool,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn new(loss: LossConfig, epochs: usize) -> Self {
        Self {
            loss,
            learning_rate: default_lr(),
            adam_betas: default_betas(),
            adam_eps: default_eps(),
            batch_size: default_batch(),
            epochs,
            seed: 0,
            checkpoint_every: 0,
            use_mask_channel: false,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            betas: self.adam_betas,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-item training loss.
    pub loss: f64,
    pub mc: Option<f64>,
    pub ei: Option<f64>,
    pub val_sdr_db: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,mc,ei,val_sdr_db,seconds";

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            write_record(&mut out, r)?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_record(out: &mut impl Write, r: &EpochRecord) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{:.3}",
        r.epoch,
        r.loss,
        opt(r.mc),
        opt(r.ei),
        opt(r.val_sdr_db),
        r.seconds
    )?;
    Ok(())
}

/// Optional side channels of a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Directory for periodic and last-finite checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Appended to as each epoch finishes.
    pub log_path: Option<PathBuf>,
    /// Held-out set with ground truth; its blended mean SDR is logged.
    pub validation: Option<(&'a Dataset, BlendConfig)>,
    /// Continue from this checkpoint instead of initializing from the seed.
    pub resume: Option<Checkpoint>,
    pub on_epoch: Option<&'a dyn Fn(&EpochRecord)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Trains `arch` on `dataset` under `config`. The returned checkpoint holds
/// the final parameters and optimizer state.
pub fn train(config: &TrainConfig, dataset: &Dataset, arch: &Arch, options: TrainOptions<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    let cfg = dataset.clip_config()?;
    if arch.uses_mask() != config.use_mask_channel {
        return Err(Error::ArchMismatch(format!(
            "use_mask_channel = {} but the architecture takes {} input channel(s)",
            config.use_mask_channel,
            arch.in_channels()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let len = dataset
        .signal_len()
        .ok_or_else(|| Error::InvalidConfig("training items differ in length".into()))?;
    if arch.signal_len().is_some_and(|n| n != len) {
        return Err(Error::ArchMismatch(format!("architecture expects length {:?}, data has {len}", arch.signal_len())));
    }
    if config.loss.kind.needs_ground_truth() && !dataset.has_ground_truth() {
        return Err(Error::InvalidConfig("supervised training needs ground-truth signals".into()));
    }

    let mut ck = match options.resume {
        Some(ck) => {
            if &ck.arch != arch {
                return Err(Error::ArchMismatch("resume checkpoint has a different architecture".into()));
            }
            ck
        }
        None => Checkpoint::fresh(arch.clone(), config.seed)?,
    };
    ck.config = Some(config.clone());
    let mut opt = match ck.optimizer.take() {
        Some(o) => o,
        None => AdamState::new(&ck.params),
    };
    let adam = config.adam();
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log_file = match &options.log_path {
        Some(p) => {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(p)?;
            if f.metadata()?.len() == 0 {
                writeln!(f, "{}", TrainLog::CSV_HEADER)?;
            }
            Some(f)
        }
        None => None,
    };

    let mut log = TrainLog::default();
    for epoch in ck.epochs_done..config.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let last_finite = ck.params.clone();
        let last_opt = opt.clone();
        let (mut loss_sum, mut mc_sum, mut ei_sum) = (0.0, 0.0, 0.0);
        let (mut has_mc, mut has_ei) = (false, false);
        for batch in order.chunks(config.batch_size) {
            let ys: Vec<&[f64]> = batch.iter().map(|&i| dataset.items[i].y.as_slice()).collect();
            let xs: Option<Vec<&[f64]>> = batch
                .iter()
                .map(|&i| dataset.items[i].x.as_deref())
                .collect();
            let mut graph = Graph::new();
            let terms = {
                let net = Network::new(&ck.arch, &ck.params);
                total_loss(&mut graph, &net, &cfg, &ys, xs.as_deref(), &config.loss, &mut rng)?
            };
            if !terms.value.is_finite() {
                let detail = format!("batch loss {}", terms.value);
                if let Some(dir) = &options.checkpoint_dir {
                    let snapshot = Checkpoint {
                        arch: ck.arch.clone(),
                        params: last_finite,
                        optimizer: Some(last_opt),
                        epochs_done: epoch,
                        config: ck.config.clone(),
                    };
                    snapshot.save(dir.join("last_finite.ckpt"))?;
                }
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, detail });
            }
            loss_sum += terms.value;
            if let Some(v) = terms.mc {
                mc_sum += v;
                has_mc = true;
            }
            if let Some(v) = terms.ei {
                ei_sum += v;
                has_ei = true;
            }
            ck.params.zero_grads();
            graph.backward(terms.total, &mut ck.params)?;
            adam_step(&mut ck.params, &mut opt, &adam)?;
        }
        ck.params.zero_grads();
        ck.epochs_done = epoch + 1;

        let n = dataset.len() as f64;
        let val_sdr_db = match &options.validation {
            Some((val, blend)) => {
                let report = evaluate(&ck, val, blend)?;
                Some(report.model.mean)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / n,
            mc: has_mc.then_some(mc_sum / n),
            ei: has_ei.then_some(ei_sum / n),
            val_sdr_db,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            write_record(f, &record)?;
        }
        if let Some(cb) = options.on_epoch {
            cb(&record);
        }
        log.records.push(record);

        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && ck.epochs_done % config.checkpoint_every == 0 {
                let snapshot = Checkpoint {
                    optimizer: Some(opt.clone()),
                    ..ck.clone()
                };
                snapshot.save(dir.join(format!("epoch-{:04}.ckpt", ck.epochs_done)))?;
            }
        }
    }
    ck.optimizer = Some(opt);
    Ok(TrainOutcome { checkpoint: ck, log })
}
