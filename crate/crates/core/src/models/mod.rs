//! Bias-free reconstruction networks.
//!
//! Both architectures are built only from bias-free linear maps, ReLU,
//! max-pooling and nearest upsampling, so the full map is positively
//! homogeneous: `f(a x) = a f(x)` for every `a >= 0`.
//!
//! Inputs are `[batch, channels, length]`. Channel 0 is the measurement; the
//! optional channel 1 is the unsaturated-sample indicator (1 = unsaturated).

mod mlp;
mod unet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mlp::MlpArch;
pub use unet::Unet1dArch;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::clip::{saturation_mask, ClipConfig, SaturationMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Arch {
    Mlp(MlpArch),
    Unet1d(Unet1dArch),
}

impl Arch {
    pub fn in_channels(&self) -> usize {
        match self {
            Arch::Mlp(a) => a.in_channels,
            Arch::Unet1d(a) => a.in_channels,
        }
    }

    pub fn uses_mask(&self) -> bool {
        self.in_channels() == 2
    }

    /// Same architecture taking `channels` input channels.
    pub fn with_in_channels(&self, channels: usize) -> Arch {
        let mut arch = self.clone();
        match &mut arch {
            Arch::Mlp(a) => a.in_channels = channels,
            Arch::Unet1d(a) => a.in_channels = channels,
        }
        arch
    }

    /// Fixed signal length, if the architecture has one.
    pub fn signal_len(&self) -> Option<usize> {
        match self {
            Arch::Mlp(a) => Some(a.input_dim),
            Arch::Unet1d(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Arch::Mlp(a) => a.validate(),
            Arch::Unet1d(a) => a.validate(),
        }
    }

    /// Fresh parameters, deterministic in `seed`. Never registers a bias.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut init = Initializer::new(seed);
        match self {
            Arch::Mlp(a) => a.init_params(&mut init),
            Arch::Unet1d(a) => a.init_params(&mut init),
        }
    }

    pub fn forward(&self, graph: &mut Graph, params: &ParamStore, input: Var) -> Result<Var> {
        let shape = graph.shape(input);
        if shape.len() != 3 || shape[1] != self.in_channels() {
            return Err(Error::ArchMismatch(format!(
                "expected input [batch, {}, length], got {shape:?}",
                self.in_channels()
            )));
        }
        match self {
            Arch::Mlp(a) => a.forward(graph, params, input),
            Arch::Unet1d(a) => a.forward(graph, params, input),
        }
    }

    /// Checks that `params` holds exactly the tensors this architecture
    /// would create, with matching shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let reference = self.init_params(0)?;
        let same = reference.len() == params.len()
            && reference
                .iter()
                .zip(params.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !same {
            return Err(Error::ArchMismatch(
                "parameter names or shapes do not match the architecture".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic zero-mean uniform initializer scaled by fan-in.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-uniform: variance `2 / fan_in`, for weights feeding a ReLU.
    pub(crate) fn relu_layer(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        self.uniform(shape, (6.0 / fan_in as f64).sqrt())
    }

    /// Variance `1 / fan_in`, for the linear output layer.
    pub(crate) fn linear_layer(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        self.uniform(shape, (3.0 / fan_in as f64).sqrt())
    }

    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data).expect("initializer shapes are non-empty")
    }
}

/// A reconstruction map from an assembled input `[B, C, L]` to `[B, 1, L]`.
pub trait SignalMap {
    fn apply(&self, graph: &mut Graph, input: Var) -> Result<Var>;

    fn in_channels(&self) -> usize;
}

/// An architecture bound to a parameter store.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    pub arch: &'a Arch,
    pub params: &'a ParamStore,
}

impl<'a> Network<'a> {
    pub fn new(arch: &'a Arch, params: &'a ParamStore) -> Self {
        Self { arch, params }
    }

    /// Forward pass without gradient tracking on a batch of equal-length
    /// measurements. Returns the raw network outputs.
    pub fn reconstruct(&self, ys: &[&[f64]], cfg: &ClipConfig) -> Result<Vec<Vec<f64>>> {
        let input = assemble_batch(ys, cfg, self.arch.uses_mask())?;
        let mut graph = Graph::inference();
        let x = graph.constant(input);
        let out = self.arch.forward(&mut graph, self.params, x)?;
        let len = graph.shape(out)[2];
        Ok(graph.value(out).data().chunks(len).map(<[f64]>::to_vec).collect())
    }
}

impl SignalMap for Network<'_> {
    fn apply(&self, graph: &mut Graph, input: Var) -> Result<Var> {
        self.arch.forward(graph, self.params, input)
    }

    fn in_channels(&self) -> usize {
        self.arch.in_channels()
    }
}

/// Input tensor for one measurement: `[1, n]`, or `[2, n]` with the
/// unsaturated indicator as the second row.
pub fn assemble_input(y: &[f64], mask: &SaturationMask, use_mask: bool) -> Result<Tensor> {
    if mask.len() != y.len() {
        return Err(Error::shapes("assemble_input", &[&[y.len()], &[mask.len()]]));
    }
    if use_mask {
        let mut data = y.to_vec();
        data.extend(mask.unsaturated_indicator());
        Tensor::new(vec![2, y.len()], data)
    } else {
        Tensor::new(vec![1, y.len()], y.to_vec())
    }
}

/// Stacks equal-length measurements into `[B, C, n]`.
pub fn assemble_batch(ys: &[&[f64]], cfg: &ClipConfig, use_mask: bool) -> Result<Tensor> {
    let Some(first) = ys.first() else {
        return Err(Error::InvalidTensor("empty batch".into()));
    };
    let n = first.len();
    let channels = if use_mask { 2 } else { 1 };
    let mut data = Vec::with_capacity(ys.len() * channels * n);
    for y in ys {
        let mask = saturation_mask(y, cfg);
        let item = assemble_input(y, &mask, use_mask)?;
        if y.len() != n {
            return Err(Error::shapes("assemble_batch", &[&[n], &[y.len()]]));
        }
        data.extend_from_slice(item.data());
    }
    Tensor::new(vec![ys.len(), channels, n], data)
}

/// Graph-level assembly for a measurement produced inside the graph
/// (`[B, 1, L]`). The indicator channel is a constant computed from the
/// current values.
pub fn assemble_var(graph: &mut Graph, y: Var, cfg: &ClipConfig, use_mask: bool) -> Result<Var> {
    if !use_mask {
        return Ok(y);
    }
    let value = graph.value(y);
    let mask = saturation_mask(value.data(), cfg);
    let indicator = Tensor::new(value.shape().to_vec(), mask.unsaturated_indicator())?;
    let m = graph.constant(indicator);
    graph.concat(&[y, m])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assemble_examples() {
        let cfg = ClipConfig::new(1.0).unwrap();
        let y = [0.3, 1.0];
        let mask = saturation_mask(&y, &cfg);
        let plain = assemble_input(&y, &mask, false).unwrap();
        assert_eq!(plain.shape(), &[1, 2]);
        let with_mask = assemble_input(&y, &mask, true).unwrap();
        assert_eq!(with_mask.shape(), &[2, 2]);
        assert_eq!(with_mask.data(), &[0.3, 1.0, 1.0, 0.0]);

        let all_sat = [1.0, -1.0, 1.0];
        let t = assemble_input(&all_sat, &saturation_mask(&all_sat, &cfg), true).unwrap();
        assert_eq!(&t.data()[3..], &[0.0, 0.0, 0.0]);

        let short = saturation_mask(&[0.1], &cfg);
        assert!(assemble_input(&y, &short, true).is_err());
    }

    #[test]
    fn batch_rejects_ragged_input() {
        let cfg = ClipConfig::new(1.0).unwrap();
        let a = [0.1, 0.2];
        let b = [0.1];
        assert!(assemble_batch(&[&a, &b], &cfg, false).is_err());
        assert_eq!(assemble_batch(&[&a, &a], &cfg, true).unwrap().shape(), &[2, 2, 2]);
    }

    #[test]
    fn fresh_networks_ignore_the_mask_channel() {
        let archs = [
            Arch::Mlp(MlpArch { input_dim: 6, in_channels: 2, hidden_dims: vec![8], skip: false }),
            Arch::Unet1d(Unet1dArch { in_channels: 2, depth: 2, base_channels: 3, ..Unet1dArch::default() }),
        ];
        for arch in archs {
            let params = arch.init_params(3).unwrap();
            let run = |mask: f64| {
                let mut data: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) * 0.3).collect();
                data.extend([mask; 6]);
                let mut g = Graph::inference();
                let x = g.constant(Tensor::new(vec![1, 2, 6], data).unwrap());
                let y = arch.forward(&mut g, &params, x).unwrap();
                g.value(y).data().to_vec()
            };
            assert_eq!(run(0.0), run(1.0));
            assert!(run(0.0).iter().any(|v| *v != 0.0));
        }
    }
}
