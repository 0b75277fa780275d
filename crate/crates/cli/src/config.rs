//! TOML run configurations and their command-line overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use declip_core::eval::{ShiftSetup, SyntheticRun};
use declip_core::losses::{GroupSampler, LossConfig, LossKind};
use declip_core::models::{Arch, MlpArch, Unet1dArch};
use declip_core::train::TrainConfig;
use declip_core::{BlendConfig, BlendMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Contents of a `train` configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainFile {
    pub arch: Arch,
    pub train: TrainConfig,
}

/// Overrides for every [`TrainConfig`] field.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    /// Objective: supervised, nmc, mc or mc+ei.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub ei_weight: Option<f64>,
    #[arg(long)]
    pub g_min: Option<f64>,
    #[arg(long)]
    pub g_max: Option<f64>,
    /// Gain draws per item in the equivariance term.
    #[arg(long)]
    pub g_samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Feed the unsaturated-sample indicator as a second input channel.
    #[arg(long)]
    pub use_mask_channel: Option<bool>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(kind) = self.loss {
            cfg.loss.kind = kind;
        }
        if let Some(w) = self.ei_weight {
            cfg.loss.ei_weight = w;
        }
        if self.g_min.is_some() || self.g_max.is_some() || self.g_samples.is_some() {
            let base = cfg.loss.sampler.unwrap_or(GroupSampler::uniform(0.5, 1.5)?);
            cfg.loss.sampler = Some(GroupSampler {
                g_min: self.g_min.unwrap_or(base.g_min),
                g_max: self.g_max.unwrap_or(base.g_max),
                samples_per_item: self.g_samples.unwrap_or(base.samples_per_item),
            });
        }
        if cfg.loss.kind == LossKind::McEi && cfg.loss.sampler.is_none() {
            cfg.loss.sampler = Some(GroupSampler::uniform(0.5, 1.5)?);
        }
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.adam_betas.0, self.adam_beta1);
        set(&mut cfg.adam_betas.1, self.adam_beta2);
        set(&mut cfg.adam_eps, self.adam_eps);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.checkpoint_every, self.checkpoint_every);
        set(&mut cfg.use_mask_channel, self.use_mask_channel);
        cfg.validate()?;
        Ok(())
    }
}

fn set<T: Copy>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ArchKind {
    Mlp,
    Unet,
}

/// Architecture selection when no configuration file provides one.
#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    #[arg(long, value_enum)]
    pub arch: Option<ArchKind>,
    /// MLP hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Disable the additive input-to-output skip connection.
    #[arg(long)]
    pub no_skip: bool,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
}

impl ArchArgs {
    /// Builds or adjusts an architecture. `input_dim` fixes the MLP size.
    pub fn resolve(&self, base: Option<Arch>, input_dim: usize, mask: bool) -> Result<Arch> {
        let channels = if mask { 2 } else { 1 };
        let arch = match (self.arch, base) {
            (None, Some(arch)) => arch,
            (Some(ArchKind::Mlp), _) | (None, None) => Arch::Mlp(MlpArch::new(input_dim)),
            (Some(ArchKind::Unet), _) => Arch::Unet1d(Unet1dArch::default()),
        };
        let arch = match arch {
            Arch::Mlp(mut a) => {
                if let Some(h) = &self.hidden {
                    a.hidden_dims = h.clone();
                }
                a.skip &= !self.no_skip;
                Arch::Mlp(a)
            }
            Arch::Unet1d(mut a) => {
                set(&mut a.depth, self.depth);
                set(&mut a.base_channels, self.base_channels);
                set(&mut a.kernel_size, self.kernel_size);
                a.skip &= !self.no_skip;
                Arch::Unet1d(a)
            }
        };
        let arch = arch.with_in_channels(channels);
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Args)]
pub struct BlendArgs {
    /// Blending onset as a fraction of mu.
    #[arg(long, default_value_t = 0.95)]
    pub tau: f64,
    /// Divide the ramp by mu (1 - tau) (level-normalized) or by 1 - tau mu.
    #[arg(long, value_enum, default_value_t = BlendModeArg::LevelNormalized)]
    pub blend_mode: BlendModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BlendModeArg {
    LevelNormalized,
    Unnormalized,
}

impl BlendArgs {
    pub fn config(&self) -> Result<BlendConfig> {
        let bc = BlendConfig {
            tau: self.tau,
            mode: match self.blend_mode {
                BlendModeArg::LevelNormalized => BlendMode::LevelNormalized,
                BlendModeArg::Unnormalized => BlendMode::Unnormalized,
            },
        };
        bc.validate()?;
        Ok(bc)
    }
}

/// Synthetic base run used by the sweeps when no file is given.
pub fn default_synthetic_run() -> Result<SyntheticRun> {
    let mut train = TrainConfig::new(LossConfig::self_supervised(GroupSampler::uniform(0.5, 1.5)?), 150);
    train.batch_size = 32;
    Ok(SyntheticRun {
        data: declip_core::data::SyntheticSpec::new(10, 0.3),
        arch: MlpArch {
            skip: false,
            ..MlpArch::new(100)
        },
        train,
        blend: BlendConfig::default(),
    })
}

pub fn check_shift_setup(setup: &ShiftSetup) -> Result<()> {
    if setup.supervised.loss.kind != LossKind::Supervised {
        bail!("shift: the `supervised` run must use the supervised loss");
    }
    if setup.self_supervised.loss.kind.needs_ground_truth() {
        bail!("shift: the `self_supervised` run must not need ground truth");
    }
    setup.supervised.validate()?;
    setup.self_supervised.validate()?;
    Ok(())
}
