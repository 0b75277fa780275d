//! Random-subspace signals rescaled to hit an exact clipped proportion.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Item, Split};
use crate::clip::{clip, clip_proportion, ClipConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_ambient")]
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    #[serde(default = "default_num_signals")]
    pub num_signals: usize,
    #[serde(default = "default_num_test")]
    pub num_test: usize,
    pub clip_proportion: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ambient() -> usize {
    100
}
fn default_num_signals() -> usize {
    1000
}
fn default_num_test() -> usize {
    200
}
fn default_mu() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(subspace_dim: usize, clip_proportion: f64) -> Self {
        Self {
            ambient_dim: default_ambient(),
            subspace_dim,
            num_signals: default_num_signals(),
            num_test: default_num_test(),
            clip_proportion,
            mu: default_mu(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subspace_dim == 0 || self.subspace_dim > self.ambient_dim {
            return Err(Error::InvalidConfig(format!(
                "subspace dimension must lie in [1, {}], got {}",
                self.ambient_dim, self.subspace_dim
            )));
        }
        if !(self.clip_proportion > 0.0 && self.clip_proportion < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip proportion must lie in (0, 1), got {}",
                self.clip_proportion
            )));
        }
        ClipConfig::new(self.mu)?;
        Ok(())
    }

    /// Train and test sets drawn from one shared subspace.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let basis = gen_subspace(self.subspace_dim, self.ambient_dim, &mut rng)?;
        let provenance = serde_json::to_string(self)?;
        let cfg = ClipConfig::new(self.mu)?;
        let mut make = |count: usize, split: Split| -> Result<Dataset> {
            let mut items = Vec::with_capacity(count);
            for i in 0..count {
                let x = sample_signal(&basis, &mut rng);
                let scaled = rescale_for_proportion(&x, self.clip_proportion, self.mu)?;
                items.push(Item {
                    y: clip(&scaled.signal, &cfg),
                    x: Some(scaled.signal),
                    meta: format!("synthetic-{split}#{i}"),
                });
            }
            Ok(Dataset {
                mu: self.mu,
                split,
                provenance: provenance.clone(),
                items,
            })
        };
        let train = make(self.num_signals, Split::Train)?;
        let test = make(self.num_test, Split::Test)?;
        Ok((train, test))
    }
}

/// `n × d` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Basis {
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.d + j]).collect()
    }

    /// Smallest ratio between a column's component orthogonal to the previous
    /// columns and its own norm (modified Gram-Schmidt). Zero means rank
    /// deficient.
    pub fn min_pivot(&self) -> f64 {
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(self.d);
        let mut min = f64::INFINITY;
        for j in 0..self.d {
            let col = self.column(j);
            let norm = dot(&col, &col).sqrt();
            let mut v = col;
            for u in &q {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
            let rnorm = dot(&v, &v).sqrt();
            min = min.min(if norm > 0.0 { rnorm / norm } else { 0.0 });
            if rnorm > 0.0 {
                v.iter_mut().for_each(|a| *a /= rnorm);
            }
            q.push(v);
        }
        min
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MIN_PIVOT: f64 = 1e-8;

/// `n × d` basis with iid standard normal entries. A numerically rank
/// deficient draw is redrawn once before giving up.
pub fn gen_subspace<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Basis> {
    if d == 0 || d > n {
        return Err(Error::InvalidConfig(format!("need 1 <= d <= n, got d={d}, n={n}")));
    }
    let mut pivot = 0.0;
    for _ in 0..2 {
        let data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let basis = Basis { n, d, data };
        pivot = basis.min_pivot();
        if pivot > MIN_PIVOT {
            return Ok(basis);
        }
    }
    Err(Error::RankDeficient(pivot))
}

/// `basis · c` with standard normal coefficients `c`.
pub fn sample_signal<R: Rng + ?Sized>(basis: &Basis, rng: &mut R) -> Vec<f64> {
    let c: Vec<f64> = (0..basis.d).map(|_| rng.sample(StandardNormal)).collect();
    basis.data.chunks(basis.d).map(|row| dot(row, &c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub q: f64,
    pub signal: Vec<f64>,
    /// Number of samples targeted for saturation, `round(v n)`.
    pub target: usize,
    /// Saturated fraction actually reached; differs from `target / n` only
    /// when magnitudes tie.
    pub achieved: f64,
}

impl Rescaled {
    pub fn is_exact(&self) -> bool {
        self.achieved == self.target as f64 / self.signal.len() as f64
    }
}

/// Scales `x` so that exactly `k = round(v n)` samples reach `mu`: `q` is
/// `mu` over the k-th largest magnitude, nudged up by ulps if rounding left
/// that sample just short of the threshold.
pub fn rescale_for_proportion(x: &[f64], v: f64, mu: f64) -> Result<Rescaled> {
    let cfg = ClipConfig::new(mu)?;
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidConfig(format!("clip proportion must lie in (0, 1), got {v}")));
    }
    let n = x.len();
    let k = (v * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::ProportionTooSmall { v, n });
    }
    let mut mags: Vec<f64> = x.iter().map(|a| a.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let m = mags[k - 1];
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "signal needs {k} nonzero finite samples to reach proportion {v}"
        )));
    }
    let mut q = mu / m;
    while q * m < mu {
        q = q.next_up();
    }
    let signal: Vec<f64> = x.iter().map(|a| q * a).collect();
    let achieved = clip_proportion(&clip(&signal, &cfg), &cfg);
    Ok(Rescaled {
        q,
        signal,
        target: k,
        achieved,
    })
}
