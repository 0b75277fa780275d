use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::autodiff::{ParamStore, Tensor};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::models::Arch;

const MAGIC: &[u8; 8] = b"DCLPCKPT";
const VERSION: u32 = 1;

/// Network parameters plus everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
    pub epochs_done: usize,
    pub config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    epochs_done: usize,
    config: Option<TrainConfig>,
}

impl Checkpoint {
    /// Freshly initialized parameters for `arch`.
    pub fn fresh(arch: Arch, seed: u64) -> Result<Self> {
        let params = arch.init_params(seed)?;
        Ok(Self {
            arch,
            params,
            optimizer: None,
            epochs_done: 0,
            config: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and checks that the stored architecture equals `arch`.
    pub fn load_for(path: impl AsRef<Path>, arch: &Arch) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.arch != arch {
            return Err(Error::ArchMismatch(format!(
                "checkpoint holds {:?}, expected {:?}",
                ck.arch, arch
            )));
        }
        Ok(ck)
    }

    /// Layout after the container header:
    ///
    /// ```text
    /// header    str   JSON {"arch", "epochs_done", "config"}
    /// count     u64
    /// per parameter:
    ///   name    str
    ///   rank    u32
    ///   dims    rank × u64
    ///   values  f64 × prod(dims)
    /// has_opt   u8
    /// if has_opt:
    ///   step    u64
    ///   per parameter: m then v, f64 × prod(dims) each
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&Header {
            arch: self.arch.clone(),
            epochs_done: self.epochs_done,
            config: self.config.clone(),
        })?;
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(&header);
        w.u64(self.params.len() as u64);
        for (name, t) in self.params.iter() {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        match &self.optimizer {
            Some(opt) => {
                if !opt.matches(&self.params) {
                    return Err(Error::ArchMismatch("optimizer state does not match parameters".into()));
                }
                w.u8(1);
                w.u64(opt.step);
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    w.f64s(m);
                    w.f64s(v);
                }
            }
            None => w.u8(0),
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let header: Header = serde_json::from_str(&r.str()?)?;
        let count = r.len()?;
        let mut params = ParamStore::new();
        let mut sizes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("parameter size overflow".into()))?;
            params.insert(name, Tensor::new(shape, r.f64s(n)?)?)?;
            sizes.push(n);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(sizes.len());
                let mut v = Vec::with_capacity(sizes.len());
                for &n in &sizes {
                    m.push(r.f64s(n)?);
                    v.push(r.f64s(n)?);
                }
                Some(AdamState { step, m, v })
            }
            other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
        };
        r.finish()?;
        header.arch.check_params(&params)?;
        Ok(Self {
            arch: header.arch,
            params,
            optimizer,
            epochs_done: header.epochs_done,
            config: header.config,
        })
    }
}
