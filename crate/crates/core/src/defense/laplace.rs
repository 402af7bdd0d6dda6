//! Laplace noise on classifier posteriors.
//!
//! Two modes are supported: the traditional zero-mean mechanism and the
//! adaptive one whose location is the record's maximum posterior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::PosteriorRecord;
use crate::error::{Error, Result};

/// Floor applied to perturbed entries before renormalization.
pub const POSTERIOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    Zero,
    MaxPosterior,
}

impl MuMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MuMode::Zero => "zero",
            MuMode::MaxPosterior => "max_posterior",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceConfig {
    pub mu_mode: MuMode,
    pub epsilon: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    #[serde(default = "default_true")]
    pub renormalize: bool,
    /// Also perturb the victim's posteriors inside its training loop.
    #[serde(default)]
    pub perturb_training: bool,
}

fn default_sensitivity() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl LaplaceConfig {
    pub fn new(mu_mode: MuMode, epsilon: f64) -> Self {
        LaplaceConfig {
            mu_mode,
            epsilon,
            sensitivity: 1.0,
            renormalize: true,
            perturb_training: false,
        }
    }

    pub fn scale(&self) -> Result<f64> {
        laplace_scale(self.epsilon, self.sensitivity)
    }
}

/// `b = Δf / ε`.
pub fn laplace_scale(epsilon: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::invalid("sensitivity", "must be positive and finite"));
    }
    Ok(sensitivity / epsilon)
}

/// Inverse CDF of `Lap(mu, b)` at `u ∈ (-1/2, 1/2)`.
pub fn laplace_from_uniform(mu: f64, b: f64, u: f64) -> f64 {
    if b == 0.0 || u == 0.0 {
        return mu;
    }
    mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn laplace_sample<R: Rng + ?Sized>(mu: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.gen();
        // v = 0 would map to u = -1/2 and ln(0)
        if v > 0.0 {
            return laplace_from_uniform(mu, b, v - 0.5);
        }
    }
}

/// Echo of the mechanism attached to perturbed posterior records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpEcho {
    pub mu_mode: MuMode,
    pub epsilon: f64,
    pub sensitivity: f64,
}

/// Adds an independent Laplace draw to every coordinate, clamps to
/// `[1e-9, 1]` and optionally renormalizes. Labels are left untouched.
pub fn perturb_vector<R: Rng + ?Sized>(
    posteriors: &[f64],
    cfg: &LaplaceConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let b = cfg.scale()?;
    let mu = match cfg.mu_mode {
        MuMode::Zero => 0.0,
        MuMode::MaxPosterior => posteriors.iter().copied().fold(0.0, f64::max),
    };
    let mut out: Vec<f64> = posteriors
        .iter()
        .map(|&p| (p + laplace_sample(mu, b, rng)).clamp(POSTERIOR_FLOOR, 1.0))
        .collect();
    if cfg.renormalize {
        let sum: f64 = out.iter().sum();
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub fn perturb_posteriors<R: Rng + ?Sized>(
    record: &PosteriorRecord,
    cfg: &LaplaceConfig,
    rng: &mut R,
) -> Result<PosteriorRecord> {
    let mut out = record.clone();
    out.posteriors = perturb_vector(&record.posteriors, cfg, rng)?;
    out.dp = Some(DpEcho {
        mu_mode: cfg.mu_mode,
        epsilon: cfg.epsilon,
        sensitivity: cfg.sensitivity,
    });
    Ok(out)
}
