use serde::{Deserialize, Serialize};

use super::Initializer;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Fully connected bias-free ReLU network on a fixed-length signal.
///
/// The `in_channels × input_dim` input is flattened, passed through the
/// hidden layers, and projected back to `input_dim`. With `skip`, the
/// measurement channel is added to the output so the layers learn a
/// correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "yes")]
    pub skip: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}

impl MlpArch {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            in_channels: 1,
            hidden_dims: default_hidden(),
            skip: true,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("MLP dimensions must be positive".into()));
        }
        if !matches!(self.in_channels, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "MLP in_channels must be 1 or 2, got {}",
                self.in_channels
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim * self.in_channels;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.input_dim));
        dims
    }

    fn weight_name(i: usize) -> String {
        format!("dense{i}.weight")
    }

    pub(crate) fn init_params(&self, init: &mut Initializer) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut w = if i == last {
                init.linear_layer(vec![fan_in, fan_out], fan_in)
            } else {
                init.relu_layer(vec![fan_in, fan_out], fan_in)
            };
            if i == 0 && self.in_channels == 2 {
                // mask rows start at zero: a fresh network ignores the mask
                w.data_mut()[self.input_dim * fan_out..].fill(0.0);
            }
            store.insert(Self::weight_name(i), w)?;
        }
        Ok(store)
    }

    pub(crate) fn forward(&self, graph: &mut Graph, params: &ParamStore, input: Var) -> Result<Var> {
        let shape = graph.shape(input).to_vec();
        let (batch, len) = (shape[0], shape[2]);
        if len != self.input_dim {
            return Err(Error::ArchMismatch(format!(
                "MLP expects length {}, got {len}",
                self.input_dim
            )));
        }
        let mut h = graph.reshape(input, vec![batch, self.in_channels * len])?;
        let n_layers = self.hidden_dims.len() + 1;
        for i in 0..n_layers {
            let w = graph.param(params, &Self::weight_name(i))?;
            h = graph.matmul(h, w)?;
            if i + 1 < n_layers {
                h = graph.relu(h)?;
            }
        }
        let mut out = graph.reshape(h, vec![batch, 1, len])?;
        if self.skip {
            let signal = if self.in_channels == 1 {
                input
            } else {
                graph.slice_channels(input, 0, 1)?
            };
            out = graph.add(out, signal)?;
        }
        Ok(out)
    }
}
