use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, SdrReport};
use crate::clip::BlendConfig;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::Arch;
use crate::train::{train, Checkpoint, TrainConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSetup {
    /// Input channels are set per run from `use_mask_channel`.
    pub arch: Arch,
    pub supervised: TrainConfig,
    pub self_supervised: TrainConfig,
    #[serde(default)]
    pub blend: BlendConfig,
}

#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub setup: ShiftSetup,
    pub identity: SdrReport,
    pub supervised: SdrReport,
    pub self_supervised: SdrReport,
    pub supervised_checkpoint: Checkpoint,
    pub self_supervised_checkpoint: Checkpoint,
}

impl ShiftReport {
    pub const CSV_HEADER: &'static str = "method,mean_sdr_db,std_sdr_db,n";

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# config: {}", serde_json::to_string(&self.setup)?)?;
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (name, r) in [
            ("identity", &self.identity),
            ("supervised", &self.supervised),
            ("self-supervised", &self.self_supervised),
        ] {
            writeln!(out, "{name},{},{},{}", r.mean, r.std, r.per_item.len())?;
        }
        Ok(())
    }
}

/// Supervised training on corpus A against self-supervised training on the
/// measurements of A and B together, both scored on held-out B.
pub fn shift_experiment(
    a_train: &Dataset,
    b_train: &Dataset,
    b_test: &Dataset,
    setup: &ShiftSetup,
) -> Result<ShiftReport> {
    if a_train.mu != b_train.mu || a_train.mu != b_test.mu {
        return Err(Error::InvalidConfig("corpora must share the clipping level".into()));
    }
    let arch_for = |c: &TrainConfig| setup.arch.with_in_channels(if c.use_mask_channel { 2 } else { 1 });

    let supervised = train(&setup.supervised, a_train, &arch_for(&setup.supervised), TrainOptions::default())?;

    let mut pooled = a_train.measurements_only();
    pooled.items.extend(b_train.measurements_only().items);
    pooled.split = Split::Train;
    let self_sup = train(&setup.self_supervised, &pooled, &arch_for(&setup.self_supervised), TrainOptions::default())?;

    let sup_report = evaluate(&supervised.checkpoint, b_test, &setup.blend)?;
    let ss_report = evaluate(&self_sup.checkpoint, b_test, &setup.blend)?;
    Ok(ShiftReport {
        setup: setup.clone(),
        identity: sup_report.identity,
        supervised: sup_report.model,
        self_supervised: ss_report.model,
        supervised_checkpoint: supervised.checkpoint,
        self_supervised_checkpoint: self_sup.checkpoint,
    })
}
