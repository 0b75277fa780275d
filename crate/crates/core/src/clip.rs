//! The clipping forward operator, saturation masks, the consistency residual
//! used by the training objective, and test-time blending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_SAT: f64 = 1e-9;
pub const DEFAULT_TAU: f64 = 0.95;

/// Threshold level of the clipper plus the relative tolerance used to
/// decide whether a measured sample sits at the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub mu: f64,
    #[serde(default = "default_eps_sat")]
    pub eps_sat: f64,
}

fn default_eps_sat() -> f64 {
    DEFAULT_EPS_SAT
}

impl ClipConfig {
    pub fn new(mu: f64) -> Result<Self> {
        Self::with_tolerance(mu, DEFAULT_EPS_SAT)
    }

    pub fn with_tolerance(mu: f64, eps_sat: f64) -> Result<Self> {
        let cfg = Self { mu, eps_sat };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.eps_sat >= 0.0 && self.eps_sat < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_sat must lie in [0, 1), got {}",
                self.eps_sat
            )));
        }
        Ok(())
    }

    /// `|y| >= mu (1 - eps_sat)`.
    #[inline]
    pub fn is_saturated(&self, y: f64) -> bool {
        y.abs() >= self.mu * (1.0 - self.eps_sat)
    }

    #[inline]
    pub fn clip_sample(&self, x: f64) -> f64 {
        if x.abs() >= self.mu {
            self.mu.copysign(x)
        } else {
            x
        }
    }
}

/// Per-sample saturation flags of a measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaturationMask {
    flags: Vec<bool>,
}

impl SaturationMask {
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// 1.0 where the sample is NOT saturated, 0.0 where it is.
    pub fn unsaturated_indicator(&self) -> Vec<f64> {
        self.flags.iter().map(|&s| if s { 0.0 } else { 1.0 }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendMode {
    /// `b_j = max(0, |y_j| - tau mu) / (1 - tau mu)`
    Unnormalized,
    /// `b_j = max(0, |y_j| - tau mu) / (mu (1 - tau))`, which reaches 1 at
    /// saturation for any `mu`.
    #[default]
    LevelNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub tau: f64,
    #[serde(default)]
    pub mode: BlendMode,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            mode: BlendMode::default(),
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }

    /// Blending weight of one measured sample, clamped to `[0, 1]`.
    pub fn weight(&self, y: f64, cfg: &ClipConfig) -> f64 {
        let excess = (y.abs() - self.tau * cfg.mu).max(0.0);
        let denom = match self.mode {
            BlendMode::Unnormalized => 1.0 - self.tau * cfg.mu,
            BlendMode::LevelNormalized => cfg.mu * (1.0 - self.tau),
        };
        // unnormalized with tau * mu >= 1 has no ramp; fall back to a step
        if denom <= 0.0 {
            return if excess > 0.0 { 1.0 } else { 0.0 };
        }
        (excess / denom).clamp(0.0, 1.0)
    }
}

/// Applies the clipper elementwise.
pub fn clip(x: &[f64], cfg: &ClipConfig) -> Vec<f64> {
    x.iter().map(|&v| cfg.clip_sample(v)).collect()
}

pub fn saturation_mask(y: &[f64], cfg: &ClipConfig) -> SaturationMask {
    SaturationMask {
        flags: y.iter().map(|&v| cfg.is_saturated(v)).collect(),
    }
}

/// Fraction of saturated samples; 0 for an empty signal.
pub fn clip_proportion(y: &[f64], cfg: &ClipConfig) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.iter().filter(|&&v| cfg.is_saturated(v)).count() as f64 / y.len() as f64
}

/// Samples where the consistency residual is `v - u`. The others are
/// saturated in `v` and already exceed the threshold with the right sign in
/// `u`, so they carry no penalty.
pub fn mc_active(u: &[f64], v: &[f64], cfg: &ClipConfig) -> Vec<bool> {
    u.iter()
        .zip(v)
        .map(|(&uj, &vj)| !(cfg.is_saturated(vj) && vj.signum() * uj >= cfg.mu))
        .collect()
}

/// Consistency residual between a reconstruction `u` and measurement `v`.
pub fn mc_residual(u: &[f64], v: &[f64], cfg: &ClipConfig) -> Vec<f64> {
    mc_active(u, v, cfg)
        .into_iter()
        .zip(u.iter().zip(v))
        .map(|(active, (&uj, &vj))| if active { vj - uj } else { 0.0 })
        .collect()
}

/// Keeps the measurement where it is well below the threshold and hands over
/// to the network output as it approaches saturation.
pub fn blend(y: &[f64], xhat_net: &[f64], cfg: &ClipConfig, bc: &BlendConfig) -> Result<Vec<f64>> {
    if y.len() != xhat_net.len() {
        return Err(Error::shapes("blend", &[&[y.len()], &[xhat_net.len()]]));
    }
    Ok(y.iter()
        .zip(xhat_net)
        .map(|(&yj, &fj)| {
            let b = bc.weight(yj, cfg);
            if b == 0.0 {
                yj
            } else if b == 1.0 {
                fj
            } else {
                (1.0 - b) * yj + b * fj
            }
        })
        .collect())
}
