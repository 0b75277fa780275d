//! Self-supervised declipping of audio signals.
//!
//! A bias-free ReLU network is trained from clipped measurements alone using
//! a measurement-consistency term plus an amplitude-equivariance term. The
//! crate holds the differentiation engine, the clipping operator, the
//! networks, the objectives, data generation and ingestion, the training
//! loop, and SDR evaluation.

pub mod autodiff;
mod container;
pub mod clip;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod train;

pub use autodiff::{Graph, ParamStore, Tensor, Var};
pub use clip::{BlendConfig, BlendMode, ClipConfig, SaturationMask};
pub use data::{Dataset, Item, Split};
pub use error::{Error, Result};
pub use eval::{sdr, EvalReport, SdrReport};
pub use losses::{GroupSampler, LossConfig, LossKind};
pub use models::{Arch, MlpArch, Unet1dArch};
pub use train::{Checkpoint, TrainConfig, TrainLog};
