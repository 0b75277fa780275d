//! Datasets of clipped measurements, optionally paired with ground truth.

pub mod audio;
pub mod corpus;
pub mod synthetic;

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clip::ClipConfig;
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

pub use audio::{load_audio, window_and_clip, write_wav, AudioSignal, AudioSpec};
pub use synthetic::{gen_subspace, rescale_for_proportion, sample_signal, Basis, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub x: Option<Vec<f64>>,
    pub y: Vec<f64>,
    /// Free-form provenance, e.g. `file.wav#3` or `synthetic#17`.
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mu: f64,
    pub split: Split,
    /// JSON description of how the items were produced.
    pub provenance: String,
    pub items: Vec<Item>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clip_config(&self) -> Result<ClipConfig> {
        ClipConfig::new(self.mu)
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|i| i.x.is_some())
    }

    /// Common signal length, if all items agree.
    pub fn signal_len(&self) -> Option<usize> {
        let n = self.items.first()?.y.len();
        self.items.iter().all(|i| i.y.len() == n).then_some(n)
    }

    /// Same measurements with ground truth removed.
    pub fn measurements_only(&self) -> Dataset {
        Dataset {
            items: self
                .items
                .iter()
                .map(|i| Item { x: None, ..i.clone() })
                .collect(),
            ..self.clone()
        }
    }

    /// Checks the measurement bound and pairing lengths.
    pub fn validate(&self) -> Result<()> {
        let bound = self.mu * (1.0 + 1e-12);
        for (i, item) in self.items.iter().enumerate() {
            if let Some(v) = item.y.iter().find(|v| !(v.abs() <= bound)) {
                return Err(Error::InvalidConfig(format!(
                    "item {i}: measurement sample {v} exceeds mu = {}",
                    self.mu
                )));
            }
            if item.x.as_ref().is_some_and(|x| x.len() != item.y.len()) {
                return Err(Error::InvalidConfig(format!("item {i}: x and y lengths differ")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Layout after the common container header:
    ///
    /// ```text
    /// header   str   JSON {"mu", "split", "provenance"}
    /// count    u64
    /// per item:
    ///   flags  u8    bit 0 = ground truth present
    ///   len    u64
    ///   meta   str
    ///   y      len × f64
    ///   x      len × f64   (if flagged)
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&Header {
            mu: self.mu,
            split: self.split,
            provenance: self.provenance.clone(),
        })?;
        let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
        w.str(&header);
        w.u64(self.items.len() as u64);
        for item in &self.items {
            w.u8(u8::from(item.x.is_some()));
            w.u64(item.y.len() as u64);
            w.str(&item.meta);
            w.f64s(&item.y);
            if let Some(x) = &item.x {
                if x.len() != item.y.len() {
                    return Err(Error::InvalidConfig("x and y lengths differ".into()));
                }
                w.f64s(x);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let header: Header = serde_json::from_str(&r.str()?)?;
        let count = r.len()?;
        let mut items = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let flags = r.u8()?;
            let len = r.len()?;
            let meta = r.str()?;
            let y = r.f64s(len)?;
            let x = if flags & 1 == 1 { Some(r.f64s(len)?) } else { None };
            items.push(Item { x, y, meta });
        }
        r.finish()?;
        Ok(Dataset {
            mu: header.mu,
            split: header.split,
            provenance: header.provenance,
            items,
        })
    }

    /// Long-format CSV: `item,meta,sample,y,x` (x empty when absent).
    pub fn export_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# dataset: mu={} split={} provenance={}", self.mu, self.split, self.provenance)?;
        writeln!(out, "item,meta,sample,y,x")?;
        for (i, item) in self.items.iter().enumerate() {
            for (j, y) in item.y.iter().enumerate() {
                match &item.x {
                    Some(x) => writeln!(out, "{i},{},{j},{y},{}", item.meta, x[j])?,
                    None => writeln!(out, "{i},{},{j},{y},", item.meta)?,
                }
            }
        }
        Ok(())
    }
}

const DATASET_MAGIC: &[u8; 8] = b"DCLPDSET";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    mu: f64,
    split: Split,
    provenance: String,
}

/// Keeps exactly the items whose measurement has at least one saturated
/// sample.
pub fn filter_saturated(items: Vec<Item>, cfg: &ClipConfig) -> Vec<Item> {
    items
        .into_iter()
        .filter(|i| i.y.iter().any(|&v| cfg.is_saturated(v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(y: &[f64], x: Option<&[f64]>) -> Item {
        Item {
            x: x.map(<[f64]>::to_vec),
            y: y.to_vec(),
            meta: "t".into(),
        }
    }

    #[test]
    fn filter_examples() {
        let cfg = ClipConfig::new(1.0).unwrap();
        let kept = filter_saturated(
            vec![
                item(&[0.1, 0.2], None),
                item(&[1.0, -1.0], None),
                item(&[0.3, -1.0], None),
                item(&[0.999], None),
            ],
            &cfg,
        );
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].y, vec![1.0, -1.0]);
    }

    #[test]
    fn container_round_trip_and_corruption() {
        let ds = Dataset {
            mu: 0.1,
            split: Split::Test,
            provenance: "{\"k\":1}".into(),
            items: vec![
                item(&[0.1, -0.05, 1e-300], Some(&[0.3, -0.05, 1e-300])),
                item(&[0.0], None),
            ],
        };
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), ds);

        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Checksum)));

        let meas = ds.measurements_only();
        assert!(meas.items.iter().all(|i| i.x.is_none()));
        assert_eq!(Dataset::from_bytes(&meas.to_bytes().unwrap()).unwrap(), meas);
    }

    #[test]
    fn validate_rejects_unclipped_measurements() {
        let ds = Dataset {
            mu: 1.0,
            split: Split::Train,
            provenance: String::new(),
            items: vec![item(&[1.5], None)],
        };
        assert!(ds.validate().is_err());
    }
}
