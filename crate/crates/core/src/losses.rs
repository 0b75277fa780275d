//! Training objectives.
//!
//! Every loss is a sum over the batch of squared residual norms, built on a
//! [`Graph`] so it can be differentiated with respect to the network
//! parameters. The reconstruction map is any [`SignalMap`]; when it takes two
//! input channels, the unsaturated indicator is assembled from whatever
//! measurement the map is fed (including re-clipped signals inside the
//! equivariance term).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::clip::{mc_active, ClipConfig};
use crate::error::{Error, Result};
use crate::models::{assemble_batch, assemble_var, SignalMap};

/// Uniform distribution of gains `g` on `[g_min, g_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSampler {
    pub g_min: f64,
    pub g_max: f64,
    #[serde(default = "one")]
    pub samples_per_item: usize,
}

fn one() -> usize {
    1
}

impl GroupSampler {
    pub fn uniform(g_min: f64, g_max: f64) -> Result<Self> {
        let s = Self {
            g_min,
            g_max,
            samples_per_item: 1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_min > 0.0 && self.g_min <= self.g_max && self.g_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gain range must satisfy 0 < g_min <= g_max, got [{}, {}]",
                self.g_min, self.g_max
            )));
        }
        if self.samples_per_item == 0 {
            return Err(Error::InvalidConfig("samples_per_item must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.g_min == self.g_max {
            self.g_min
        } else {
            rng.gen_range(self.g_min..=self.g_max)
        }
    }

    /// `samples_per_item` draws for each of `batch` items, draw-major.
    pub fn draw<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.samples_per_item)
            .map(|_| (0..batch).map(|_| self.sample(rng)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "nmc")]
    Nmc,
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "mc+ei")]
    McEi,
}

impl LossKind {
    pub fn needs_ground_truth(self) -> bool {
        self == LossKind::Supervised
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(LossKind::Supervised),
            "nmc" => Ok(LossKind::Nmc),
            "mc" => Ok(LossKind::Mc),
            "mc+ei" | "mc-ei" => Ok(LossKind::McEi),
            other => Err(Error::InvalidConfig(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "unit_weight")]
    pub ei_weight: f64,
    #[serde(default)]
    pub sampler: Option<GroupSampler>,
}

fn unit_weight() -> f64 {
    1.0
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ei_weight: 1.0,
            sampler: None,
        }
    }

    pub fn self_supervised(sampler: GroupSampler) -> Self {
        Self {
            kind: LossKind::McEi,
            ei_weight: 1.0,
            sampler: Some(sampler),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ei_weight >= 0.0 && self.ei_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!("ei_weight must be >= 0, got {}", self.ei_weight)));
        }
        match (self.kind, &self.sampler) {
            (LossKind::McEi, None) => Err(Error::InvalidConfig("mc+ei needs a gain sampler".into())),
            (_, Some(s)) => s.validate(),
            _ => Ok(()),
        }
    }
}

/// The differentiable total plus the value of each component.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub value: f64,
    pub mc: Option<f64>,
    pub ei: Option<f64>,
}

/// Network input for a batch of measurements plus the measurement itself as
/// a constant `[B, 1, L]` node.
fn measurement_nodes(
    graph: &mut Graph,
    f: &dyn SignalMap,
    ys: &[&[f64]],
    cfg: &ClipConfig,
) -> Result<(Var, Var)> {
    let input = assemble_batch(ys, cfg, f.in_channels() == 2)?;
    let len = ys[0].len();
    let y: Vec<f64> = ys.iter().flat_map(|y| y.iter().copied()).collect();
    let y = graph.constant(Tensor::new(vec![ys.len(), 1, len], y)?);
    let input = graph.constant(input);
    Ok((input, y))
}

fn stack(rows: &[&[f64]], len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * len);
    for r in rows {
        if r.len() != len {
            return Err(Error::shapes("batch", &[&[len], &[r.len()]]));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), 1, len], data)
}

fn sum_sq(graph: &mut Graph, r: Var) -> Result<Var> {
    let sq = graph.square(r)?;
    graph.sum(sq)
}

/// `Σ ||f(y_i) - x_i||²`
pub fn supervised_mse(
    graph: &mut Graph,
    f: &dyn SignalMap,
    cfg: &ClipConfig,
    ys: &[&[f64]],
    xs: &[&[f64]],
) -> Result<Var> {
    if xs.len() != ys.len() {
        return Err(Error::shapes("supervised_mse", &[&[ys.len()], &[xs.len()]]));
    }
    let (input, _) = measurement_nodes(graph, f, ys, cfg)?;
    let u = f.apply(graph, input)?;
    let x = graph.constant(stack(xs, ys[0].len())?);
    let r = graph.sub(u, x)?;
    sum_sq(graph, r)
}

/// `Σ ||y_i - clip(f(y_i))||²`
pub fn nmc_loss(graph: &mut Graph, f: &dyn SignalMap, cfg: &ClipConfig, ys: &[&[f64]]) -> Result<Var> {
    let (input, y) = measurement_nodes(graph, f, ys, cfg)?;
    let u = f.apply(graph, input)?;
    let c = graph.clip(u, cfg.mu)?;
    let r = graph.sub(y, c)?;
    sum_sq(graph, r)
}

/// Consistency term on an already computed reconstruction `u` of the
/// measurement node `y`.
pub fn mc_from_output(graph: &mut Graph, u: Var, y: Var, cfg: &ClipConfig) -> Result<Var> {
    let active = mc_active(graph.value(u).data(), graph.value(y).data(), cfg);
    let gate = Tensor::new(
        graph.shape(u).to_vec(),
        active.into_iter().map(|a| if a { 1.0 } else { 0.0 }).collect(),
    )?;
    let gate = graph.constant(gate);
    let r = graph.sub(y, u)?;
    let h = graph.mul(r, gate)?;
    sum_sq(graph, h)
}

/// `Σ ||h(f(y_i), y_i)||²`
pub fn mc_loss(graph: &mut Graph, f: &dyn SignalMap, cfg: &ClipConfig, ys: &[&[f64]]) -> Result<Var> {
    let (input, y) = measurement_nodes(graph, f, ys, cfg)?;
    let u = f.apply(graph, input)?;
    mc_from_output(graph, u, y, cfg)
}

/// Equivariance term on a reconstruction `x1` (`[B, 1, L]`) with explicit
/// gains: `gains[k][i]` is the k-th draw for item i. Draws are averaged.
pub fn ei_with_gains(
    graph: &mut Graph,
    f: &dyn SignalMap,
    cfg: &ClipConfig,
    x1: Var,
    gains: &[Vec<f64>],
) -> Result<Var> {
    let shape = graph.shape(x1).to_vec();
    let (batch, len) = (shape[0], shape[2]);
    if gains.is_empty() || gains.iter().any(|g| g.len() != batch) {
        return Err(Error::InvalidConfig(format!(
            "need at least one draw of {batch} gains for the equivariance term"
        )));
    }
    let mut total: Option<Var> = None;
    for draw in gains {
        let scale: Vec<f64> = draw
            .iter()
            .flat_map(|&g| std::iter::repeat(g).take(len))
            .collect();
        let scale = graph.constant(Tensor::new(shape.clone(), scale)?);
        let gx = graph.mul(x1, scale)?;
        let y2 = graph.clip(gx, cfg.mu)?;
        let input2 = assemble_var(graph, y2, cfg, f.in_channels() == 2)?;
        let x2 = f.apply(graph, input2)?;
        let r = graph.sub(gx, x2)?;
        let term = sum_sq(graph, r)?;
        total = Some(match total {
            Some(t) => graph.add(t, term)?,
            None => term,
        });
    }
    let total = total.expect("at least one draw");
    if gains.len() == 1 {
        Ok(total)
    } else {
        graph.scalar_mul(1.0 / gains.len() as f64, total)
    }
}

/// `Σ_i E_g ||g f(y_i) - f(clip(g f(y_i)))||²`, Monte Carlo over `sampler`.
pub fn ei_loss<R: Rng + ?Sized>(
    graph: &mut Graph,
    f: &dyn SignalMap,
    cfg: &ClipConfig,
    ys: &[&[f64]],
    sampler: &GroupSampler,
    rng: &mut R,
) -> Result<Var> {
    let (input, _) = measurement_nodes(graph, f, ys, cfg)?;
    let x1 = f.apply(graph, input)?;
    let gains = sampler.draw(ys.len(), rng);
    ei_with_gains(graph, f, cfg, x1, &gains)
}

/// The configured objective on one batch. `xs` is required only for the
/// supervised kind.
pub fn total_loss<R: Rng + ?Sized>(
    graph: &mut Graph,
    f: &dyn SignalMap,
    cfg: &ClipConfig,
    ys: &[&[f64]],
    xs: Option<&[&[f64]]>,
    loss: &LossConfig,
    rng: &mut R,
) -> Result<LossTerms> {
    loss.validate()?;
    let total = match loss.kind {
        LossKind::Supervised => {
            let xs = xs.ok_or_else(|| {
                Error::InvalidConfig("supervised loss needs ground-truth signals".into())
            })?;
            supervised_mse(graph, f, cfg, ys, xs)?
        }
        LossKind::Nmc => nmc_loss(graph, f, cfg, ys)?,
        LossKind::Mc => {
            let total = mc_loss(graph, f, cfg, ys)?;
            let value = graph.value(total).data()[0];
            return Ok(LossTerms { total, value, mc: Some(value), ei: None });
        }
        LossKind::McEi => {
            let sampler = loss.sampler.expect("validated");
            let (input, y) = measurement_nodes(graph, f, ys, cfg)?;
            let x1 = f.apply(graph, input)?;
            let mc = mc_from_output(graph, x1, y, cfg)?;
            let mc_value = graph.value(mc).data()[0];
            if loss.ei_weight == 0.0 {
                return Ok(LossTerms { total: mc, value: mc_value, mc: Some(mc_value), ei: None });
            }
            let gains = sampler.draw(ys.len(), rng);
            let ei = ei_with_gains(graph, f, cfg, x1, &gains)?;
            let ei_value = graph.value(ei).data()[0];
            let weighted = if loss.ei_weight == 1.0 {
                ei
            } else {
                graph.scalar_mul(loss.ei_weight, ei)?
            };
            let total = graph.add(mc, weighted)?;
            let value = graph.value(total).data()[0];
            return Ok(LossTerms { total, value, mc: Some(mc_value), ei: Some(ei_value) });
        }
    };
    let value = graph.value(total).data()[0];
    Ok(LossTerms { total, value, mc: None, ei: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    /// Returns channel 0 of its input unchanged.
    struct Identity(usize);

    impl SignalMap for Identity {
        fn apply(&self, graph: &mut Graph, input: Var) -> Result<Var> {
            if self.0 == 1 {
                Ok(input)
            } else {
                graph.slice_channels(input, 0, 1)
            }
        }
        fn in_channels(&self) -> usize {
            self.0
        }
    }

    /// Ignores the input and emits fixed values (per item) as a tracked leaf.
    struct Fixed(Vec<Vec<f64>>, Cell<Option<Var>>);

    impl Fixed {
        fn new(values: Vec<Vec<f64>>) -> Self {
            Self(values, Cell::new(None))
        }
    }

    impl SignalMap for Fixed {
        fn apply(&self, graph: &mut Graph, input: Var) -> Result<Var> {
            let shape = graph.shape(input);
            let shape = vec![shape[0], 1, shape[2]];
            let leaf = graph.input(Tensor::new(shape, self.0.concat())?.with_requires_grad(true));
            self.1.set(Some(leaf));
            Ok(leaf)
        }
        fn in_channels(&self) -> usize {
            1
        }
    }

    fn unit() -> ClipConfig {
        ClipConfig::new(1.0).unwrap()
    }

    fn value(g: &Graph, v: Var) -> f64 {
        g.value(v).data()[0]
    }

    #[test]
    fn supervised_examples() {
        let mut g = Graph::new();
        let y = [0.2, -0.3];
        let l = supervised_mse(&mut g, &Identity(1), &unit(), &[&y], &[&y]).unwrap();
        assert_eq!(value(&g, l), 0.0);

        let mut g = Graph::new();
        let l = supervised_mse(&mut g, &Fixed::new(vec![vec![1.0, 1.0]]), &unit(), &[&[0.0, 0.0]], &[&[0.0, 1.0]])
            .unwrap();
        assert_eq!(value(&g, l), 1.0);
    }

    #[test]
    fn nmc_examples() {
        let y = [0.5, 1.0, -1.0];
        let mut g = Graph::new();
        let l = nmc_loss(&mut g, &Identity(1), &unit(), &[&y]).unwrap();
        assert_eq!(value(&g, l), 0.0);

        let mut g = Graph::new();
        let l = nmc_loss(&mut g, &Fixed::new(vec![vec![0.5]]), &unit(), &[&[1.0]]).unwrap();
        assert_eq!(value(&g, l), 0.25);
    }

    #[test]
    fn mc_examples() {
        let mut g = Graph::new();
        let l = mc_loss(&mut g, &Fixed::new(vec![vec![0.5, 1.7, -3.0]]), &unit(), &[&[0.5, 1.0, -1.0]]).unwrap();
        assert_eq!(value(&g, l), 0.0);

        let mut g = Graph::new();
        let f = Fixed::new(vec![vec![0.5]]);
        let l = mc_loss(&mut g, &f, &unit(), &[&[1.0]]).unwrap();
        assert_eq!(value(&g, l), 0.25);
        g.backward(l, &mut ParamStore::new()).unwrap();
        let grad = g.grad(f.1.get().unwrap()).unwrap()[0];
        assert!(grad < 0.0, "gradient must push the output upward, got {grad}");

        let mut g = Graph::new();
        let l = mc_loss(&mut g, &Fixed::new(vec![vec![0.7]]), &unit(), &[&[0.5]]).unwrap();
        assert!((value(&g, l) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn ei_hand_example() {
        // f = identity, y = [0.6], g = 2, mu = 1: x1 = 0.6, clip(1.2) = 1, x2 = 1
        let mut g = Graph::new();
        let f = Identity(1);
        let y = g.constant(Tensor::new(vec![1, 1, 1], vec![0.6]).unwrap());
        let l = ei_with_gains(&mut g, &f, &unit(), y, &[vec![2.0]]).unwrap();
        assert!((value(&g, l) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn ei_zero_for_equivariant_map() {
        // identity is equivariant as long as g x1 stays below the threshold
        let mut g = Graph::new();
        let y = g.constant(Tensor::new(vec![2, 1, 2], vec![0.1, -0.2, 0.3, 0.05]).unwrap());
        let l = ei_with_gains(&mut g, &Identity(1), &unit(), y, &[vec![1.5, 2.0]]).unwrap();
        assert_eq!(value(&g, l), 0.0);
    }

    #[test]
    fn total_loss_composition() {
        let ys: [&[f64]; 2] = [&[0.6, 1.0], &[-0.2, -1.0]];
        let sampler = GroupSampler::uniform(0.5, 1.5).unwrap();
        let f = Identity(2);

        let mut cfg = LossConfig::self_supervised(sampler);
        cfg.ei_weight = 0.0;
        let mut g = Graph::new();
        let t = total_loss(&mut g, &f, &unit(), &ys, None, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g2 = Graph::new();
        let mc = mc_loss(&mut g2, &f, &unit(), &ys).unwrap();
        assert_eq!(t.value, value(&g2, mc));

        cfg.ei_weight = 1.0;
        let mut g = Graph::new();
        let t = total_loss(&mut g, &f, &unit(), &ys, None, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g3 = Graph::new();
        let ei = ei_loss(&mut g3, &f, &unit(), &ys, &sampler, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.value, t.mc.unwrap() + value(&g3, ei));
        assert_eq!(t.ei.unwrap(), value(&g3, ei));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::new(LossKind::McEi).validate().is_err());
        assert!(GroupSampler::uniform(2.0, 1.0).is_err());
        assert!(GroupSampler::uniform(0.0, 1.0).is_err());
        assert_eq!("mc+ei".parse::<LossKind>().unwrap(), LossKind::McEi);
        let mut g = Graph::new();
        let err = total_loss(
            &mut g,
            &Identity(1),
            &unit(),
            &[&[0.1]],
            None,
            &LossConfig::new(LossKind::Supervised),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(err.is_err());
    }
}
