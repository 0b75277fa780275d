//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use declip_core::autodiff::{Graph, ParamStore, Tensor, Var};
use declip_core::clip::{clip, mc_active, ClipConfig};
use declip_core::models::{Arch, MlpArch, Network, SignalMap, Unet1dArch};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_RTOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Maps that can be checked: a network plus an objective on its output.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub arch: Arch,
    pub input: Tensor,
    pub objective: Objective,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// `Σ w ⊙ f(y)` with fixed random weights.
    Weighted(Vec<f64>),
    /// `Σ (f(y) - t)²`
    Squared(Vec<f64>),
    /// Consistency plus equivariance with fixed gains, on the measurement
    /// channel of the input.
    McEi(Vec<f64>),
}

pub fn random_case(rng: &mut ChaCha8Rng) -> GradCase {
    let mask = rng.gen_bool(0.3);
    let channels = if mask { 2 } else { 1 };
    let batch = rng.gen_range(1..=2);
    let (arch, len) = if rng.gen_bool(0.5) {
        let len = rng.gen_range(3..=8);
        let layers = rng.gen_range(1..=2);
        let hidden = (0..layers).map(|_| rng.gen_range(2..=6)).collect();
        (
            Arch::Mlp(MlpArch {
                input_dim: len,
                in_channels: channels,
                hidden_dims: hidden,
                skip: rng.gen_bool(0.5),
            }),
            len,
        )
    } else {
        let len = rng.gen_range(5..=13);
        (
            Arch::Unet1d(Unet1dArch {
                in_channels: channels,
                depth: rng.gen_range(1..=2),
                base_channels: rng.gen_range(2..=3),
                kernel_size: [1, 3, 5][rng.gen_range(0..3)],
                skip: rng.gen_bool(0.5),
            }),
            len,
        )
    };
    let mu = 0.8;
    let y: Vec<f64> = (0..batch * len).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let cfg = ClipConfig::new(mu).unwrap();
    let y = clip(&y, &cfg);
    let mut data = Vec::new();
    for b in 0..batch {
        let row = &y[b * len..(b + 1) * len];
        data.extend_from_slice(row);
        if mask {
            data.extend(row.iter().map(|v| if cfg.is_saturated(*v) { 0.0 } else { 1.0 }));
        }
    }
    let input = Tensor::new(vec![batch, channels, len], data).unwrap();
    let out_len = batch * len;
    let objective = match rng.gen_range(0..3) {
        0 => Objective::Weighted((0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        1 => Objective::Squared((0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        _ => Objective::McEi((0..batch).map(|_| rng.gen_range(0.3..2.0)).collect()),
    };
    GradCase { arch, input, objective, mu }
}

/// Loss value plus a signature of every branch decision taken, including
/// the consistency gate.
pub fn evaluate_case(case: &GradCase, params: &mut ParamStore, backward: bool) -> (f64, Vec<u32>) {
    let cfg = ClipConfig::new(case.mu).unwrap();
    let net = Network::new(&case.arch, params);
    let mut g = Graph::new();
    let x = g.constant(case.input.clone());
    let out = net.apply(&mut g, x).unwrap();
    let shape = g.shape(out).to_vec();
    let mut extra = Vec::new();
    let loss: Var = match &case.objective {
        Objective::Weighted(w) => {
            let w = g.constant(Tensor::new(shape, w.clone()).unwrap());
            let p = g.mul(out, w).unwrap();
            g.sum(p).unwrap()
        }
        Objective::Squared(t) => {
            let t = g.constant(Tensor::new(shape, t.clone()).unwrap());
            let r = g.sub(out, t).unwrap();
            let s = g.square(r).unwrap();
            g.sum(s).unwrap()
        }
        Objective::McEi(gains) => {
            let y_vals: Vec<f64> = measurement_channel(&case.input);
            let y = g.constant(Tensor::new(shape.clone(), y_vals.clone()).unwrap());
            extra.extend(
                mc_active(g.value(out).data(), &y_vals, &cfg)
                    .into_iter()
                    .map(u32::from),
            );
            let mc = declip_core::losses::mc_from_output(&mut g, out, y, &cfg).unwrap();
            let ei = declip_core::losses::ei_with_gains(&mut g, &net, &cfg, out, &[gains.clone()]).unwrap();
            g.add(mc, ei).unwrap()
        }
    };
    let value = g.value(loss).data()[0];
    let mut sig = g.branch_signature();
    sig.extend(extra);
    if backward {
        params.zero_grads();
        g.backward(loss, params).unwrap();
    }
    (value, sig)
}

fn measurement_channel(input: &Tensor) -> Vec<f64> {
    let s = input.shape();
    let (b, c, l) = (s[0], s[1], s[2]);
    (0..b)
        .flat_map(|i| input.data()[i * c * l..i * c * l + l].to_vec())
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradStats {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_rel: f64,
}

/// Compares backprop against central differences on every parameter
/// coordinate, skipping coordinates whose perturbation crosses a kink.
pub fn gradcheck(case: &GradCase, seed: u64) -> GradStats {
    let mut params = case.arch.init_params(seed).unwrap();
    let (_, base_sig) = evaluate_case(case, &mut params, true);
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.grad().unwrap().to_vec()))
        .collect();
    let mut stats = GradStats::default();
    for (name, grads) in &analytic {
        for (i, &a) in grads.iter().enumerate() {
            let orig = params.get(name).unwrap().data()[i];
            params.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let (lp, sp) = evaluate_case(case, &mut params, false);
            params.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let (lm, sm) = evaluate_case(case, &mut params, false);
            params.get_mut(name).unwrap().data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                stats.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            stats.checked += 1;
            stats.worst_rel = stats.worst_rel.max(rel);
        }
    }
    stats
}

/// `||f(a x) - a f(x)|| / ||a f(x)||` for a random network and input.
pub fn homogeneity_error(arch: &Arch, seed: u64, input: &Tensor, alpha: f64) -> f64 {
    let params = arch.init_params(seed).unwrap();
    let run = |t: Tensor| -> Vec<f64> {
        let mut g = Graph::inference();
        let x = g.constant(t);
        let out = arch.forward(&mut g, &params, x).unwrap();
        g.value(out).data().to_vec()
    };
    let base = run(input.clone());
    let scaled_input = Tensor::new(input.shape().to_vec(), input.data().iter().map(|v| alpha * v).collect()).unwrap();
    let scaled = run(scaled_input);
    let num: f64 = scaled.iter().zip(&base).map(|(s, b)| (s - alpha * b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = base.iter().map(|b| (alpha * b).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Copies unsaturated samples and replaces saturated ones by
/// `sign(y) · level`, a perfect fit of the naive consistency loss.
pub struct CopyOrConstant {
    pub cfg: ClipConfig,
    pub level: f64,
}

impl SignalMap for CopyOrConstant {
    fn apply(&self, graph: &mut Graph, input: Var) -> declip_core::Result<Var> {
        let y = graph.value(input).clone();
        let keep: Vec<f64> = y.data().iter().map(|&v| if self.cfg.is_saturated(v) { 0.0 } else { 1.0 }).collect();
        let fill: Vec<f64> = y
            .data()
            .iter()
            .map(|&v| if self.cfg.is_saturated(v) { self.level.copysign(v) } else { 0.0 })
            .collect();
        let keep = graph.constant(Tensor::new(y.shape().to_vec(), keep)?);
        let fill = graph.constant(Tensor::new(y.shape().to_vec(), fill)?);
        let kept = graph.mul(input, keep)?;
        graph.add(kept, fill)
    }

    fn in_channels(&self) -> usize {
        1
    }
}
