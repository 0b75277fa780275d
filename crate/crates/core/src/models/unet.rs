use serde::{Deserialize, Serialize};

use super::Initializer;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Bias-free 1D UNet.
///
/// Level `i` of the encoder runs two `kernel_size` convolutions with
/// `base_channels · 2^i` channels, keeps the result for the skip path, and
/// halves the length with a window-2 max pool (an odd tail is pooled on its
/// own). The decoder upsamples by nearest neighbour back to the exact skip
/// length, convolves, concatenates the skip, and runs two more convolutions.
/// A 1×1 convolution maps to one output channel. Every convolution uses
/// `(kernel_size - 1) / 2` zero padding, so output length equals input length
/// for any input length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unet1dArch {
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default = "yes")]
    pub skip: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_depth() -> usize {
    4
}
fn default_base() -> usize {
    32
}
fn default_kernel() -> usize {
    5
}

impl Default for Unet1dArch {
    fn default() -> Self {
        Self {
            in_channels: 1,
            depth: default_depth(),
            base_channels: default_base(),
            kernel_size: default_kernel(),
            skip: true,
        }
    }
}

/// One convolution in the network, in registration order.
struct ConvSpec {
    name: String,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    relu: bool,
}

impl Unet1dArch {
    pub(crate) fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "UNet in_channels must be 1 or 2, got {}",
                self.in_channels
            )));
        }
        if self.base_channels == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(
                "UNet needs base_channels > 0 and an odd kernel_size".into(),
            ));
        }
        if self.depth > 16 {
            return Err(Error::InvalidConfig(format!("UNet depth {} is too large", self.depth)));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn convs(&self) -> Vec<ConvSpec> {
        let k = self.kernel_size;
        let conv = |name: String, c_in, c_out, kernel, relu| ConvSpec {
            name,
            c_in,
            c_out,
            kernel,
            relu,
        };
        let mut out = Vec::new();
        let mut prev = self.in_channels;
        for i in 0..self.depth {
            let c = self.width(i);
            out.push(conv(format!("enc{i}.conv_a.weight"), prev, c, k, true));
            out.push(conv(format!("enc{i}.conv_b.weight"), c, c, k, true));
            prev = c;
        }
        let c = self.width(self.depth);
        out.push(conv("mid.conv_a.weight".into(), prev, c, k, true));
        out.push(conv("mid.conv_b.weight".into(), c, c, k, true));
        for i in (0..self.depth).rev() {
            let c = self.width(i);
            out.push(conv(format!("dec{i}.up.weight"), self.width(i + 1), c, k, true));
            out.push(conv(format!("dec{i}.conv_a.weight"), 2 * c, c, k, true));
            out.push(conv(format!("dec{i}.conv_b.weight"), c, c, k, true));
        }
        out.push(conv("out.weight".into(), self.width(0), 1, 1, false));
        out
    }

    pub(crate) fn init_params(&self, init: &mut Initializer) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (i, c) in self.convs().into_iter().enumerate() {
            let shape = vec![c.c_out, c.c_in, c.kernel];
            let fan_in = c.c_in * c.kernel;
            let mut w = if c.relu {
                init.relu_layer(shape, fan_in)
            } else {
                init.linear_layer(shape, fan_in)
            };
            if i == 0 && self.in_channels == 2 {
                // mask taps start at zero: a fresh network ignores the mask
                for row in w.data_mut().chunks_mut(2 * c.kernel) {
                    row[c.kernel..].fill(0.0);
                }
            }
            store.insert(c.name, w)?;
        }
        Ok(store)
    }

    fn conv(&self, graph: &mut Graph, params: &ParamStore, x: Var, spec: &ConvSpec) -> Result<Var> {
        let w = graph.param(params, &spec.name)?;
        let y = graph.conv1d(x, w, 1, (spec.kernel - 1) / 2)?;
        if spec.relu {
            graph.relu(y)
        } else {
            Ok(y)
        }
    }

    pub(crate) fn forward(&self, graph: &mut Graph, params: &ParamStore, input: Var) -> Result<Var> {
        let specs = self.convs();
        let mut specs = specs.iter();
        let mut next = || specs.next().expect("conv list matches forward structure");

        let mut h = input;
        let mut skips = Vec::with_capacity(self.depth);
        for _ in 0..self.depth {
            h = self.conv(graph, params, h, next())?;
            h = self.conv(graph, params, h, next())?;
            skips.push(h);
            h = graph.max_pool2(h)?;
        }
        h = self.conv(graph, params, h, next())?;
        h = self.conv(graph, params, h, next())?;
        for skip in skips.into_iter().rev() {
            let len = graph.shape(skip)[2];
            h = graph.upsample_nearest(h, len)?;
            h = self.conv(graph, params, h, next())?;
            h = graph.concat(&[h, skip])?;
            h = self.conv(graph, params, h, next())?;
            h = self.conv(graph, params, h, next())?;
        }
        let mut out = self.conv(graph, params, h, next())?;
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
