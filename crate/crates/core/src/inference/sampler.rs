use std::ops::Range;

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the preconditioned SG-MCMC update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Step size `l`; `l^2` plays the role of a learning rate.
    pub step_size: f64,
    /// Momentum decay.
    pub beta1: f64,
    /// Decay of the squared-gradient average.
    pub beta2: f64,
}

impl SamplerConfig {
    /// Builds a config from a learning rate `l^2`.
    pub fn from_learning_rate(lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let cfg = SamplerConfig {
            step_size: lr.sqrt(),
            beta1,
            beta2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Gradient-noise estimate `B = l/2`.
    pub fn noise_estimate(&self) -> f64 {
        0.5 * self.step_size
    }

    /// The injected noise variance must be positive: `(1 - beta1)/l > B`.
    pub fn validate(&self) -> Result<()> {
        let l = self.step_size;
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {l}"
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if (1.0 - self.beta1) / l <= self.noise_estimate() {
            return Err(Error::Config(format!(
                "noise variance is not positive: (1 - beta1)/l = {} <= l/2 = {}",
                (1.0 - self.beta1) / l,
                self.noise_estimate()
            )));
        }
        Ok(())
    }
}

/// A contiguous block of coordinates sharing one noise scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBlock {
    pub range: Range<usize>,
    pub scale: f64,
}

/// Position, momentum and preconditioner statistics of one chain.
#[derive(Clone, Debug)]
pub struct SamplerState {
    pub position: Array1<f64>,
    pub momentum: Array1<f64>,
    pub sq_avg: Array1<f64>,
    pub steps: u64,
    noise: Array1<f64>,
}

impl SamplerState {
    /// Zero momentum and statistics. Every coordinate must be covered by
    /// exactly one block.
    pub fn new(position: Array1<f64>, blocks: &[NoiseBlock]) -> Result<Self> {
        let n = position.len();
        let mut noise = Array1::from_elem(n, f64::NAN);
        for b in blocks {
            if b.range.end > n {
                return Err(Error::Dimension(format!(
                    "noise block {:?} exceeds {n} coordinates",
                    b.range
                )));
            }
            if !(b.scale >= 0.0 && b.scale.is_finite()) {
                return Err(Error::Config(format!(
                    "noise scale must be nonnegative, got {}",
                    b.scale
                )));
            }
            for k in b.range.clone() {
                if !noise[k].is_nan() {
                    return Err(Error::Config(format!(
                        "coordinate {k} is in two noise blocks"
                    )));
                }
                noise[k] = b.scale;
            }
        }
        if noise.iter().any(|v| v.is_nan()) {
            return Err(Error::Config(
                "noise blocks do not cover every coordinate".into(),
            ));
        }
        Ok(SamplerState {
            momentum: Array1::zeros(n),
            sq_avg: Array1::zeros(n),
            position,
            steps: 0,
            noise,
        })
    }

    /// Resets the chain to `position`, clearing momentum and statistics.
    pub fn restart(&mut self, position: Array1<f64>) {
        assert_eq!(position.len(), self.position.len());
        self.position = position;
        self.momentum.fill(0.0);
        self.sq_avg.fill(0.0);
    }

    pub fn noise_scales(&self) -> &Array1<f64> {
        &self.noise
    }
}

/// One update given the energy gradient at the current position:
///
/// ```text
/// V <- b2 V + (1 - b2) g^2
/// G =  1 / sqrt(1 + sqrt(V))
/// r <- b1 r - l G grad + s sqrt(2 l ((1 - b1)/l - B)) eta
/// x <- x + l G r
/// ```
///
/// The preconditioner is treated as locally constant (no divergence
/// correction term).
pub fn sgmcmc_step<R: Rng + ?Sized>(
    state: &mut SamplerState,
    grad: &Array1<f64>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<()> {
    if grad.len() != state.position.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, state has {}",
            grad.len(),
            state.position.len()
        )));
    }
    let l = cfg.step_size;
    let noise_sd = (2.0 * l * ((1.0 - cfg.beta1) / l - cfg.noise_estimate())).sqrt();
    for k in 0..grad.len() {
        let g = grad[k];
        let v = cfg.beta2 * state.sq_avg[k] + (1.0 - cfg.beta2) * g * g;
        state.sq_avg[k] = v;
        let pre = 1.0 / (1.0 + v.sqrt()).sqrt();
        let eta: f64 = rng.sample(StandardNormal);
        let r = cfg.beta1 * state.momentum[k] - l * pre * g + state.noise[k] * noise_sd * eta;
        state.momentum[k] = r;
        state.position[k] += l * pre * r;
    }
    state.steps += 1;
    Ok(())
}
