use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nocurl::{
    RelaxationConstants, DEFAULT_SINKHORN_MAX_ITERS, DEFAULT_SINKHORN_TEMPERATURE,
    DEFAULT_SINKHORN_TOL,
};
use crate::scm::ModelKind;

use super::prior::PriorConfig;
use super::sampler::SamplerConfig;

/// Flat training configuration. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lambda_s: f64,
    /// Injected-noise scale for the `p` block.
    pub scale_p: f64,
    /// Injected-noise scale for the `Theta` block.
    pub scale_theta: f64,
    /// Injected-noise scale for the continuous mask logits (joint mode only).
    pub scale_w: f64,
    pub alpha: f64,
    pub sparse_init: bool,
    pub chains: usize,
    /// SG-MCMC learning rate `l^2`; the update uses `l = sqrt(lr)`.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Hard cap on the number of iterations, applied after `epochs`.
    pub max_steps: Option<usize>,
    pub sinkhorn_t: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
    /// Binary concrete temperature.
    pub gumbel_t: f64,
    pub vi_lr: f64,
    pub mc_samples: usize,
    /// Capacity of the particle buffer.
    pub particles: usize,
    pub burn_in: f64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Linear,
            lambda_s: 50.0,
            scale_p: 0.01,
            scale_theta: 0.01,
            scale_w: 0.01,
            alpha: 0.01,
            sparse_init: false,
            chains: 10,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.99,
            batch: 512,
            epochs: 700,
            max_steps: None,
            sinkhorn_t: DEFAULT_SINKHORN_TEMPERATURE,
            sinkhorn_tol: DEFAULT_SINKHORN_TOL,
            sinkhorn_max_iters: DEFAULT_SINKHORN_MAX_ITERS,
            gumbel_t: 0.2,
            vi_lr: 1e-3,
            mc_samples: 4,
            particles: 100,
            burn_in: 0.5,
            threads: 1,
            seed: 0,
        }
    }
}

/// `(name, model, lambda_s, scale_p, scale_theta, sparse_init)`.
const PRESETS: &[(&str, ModelKind, f64, f64, f64, bool)] = &[
    ("linear-er-5", ModelKind::Linear, 50.0, 0.001, 0.001, false),
    ("linear-sf-5", ModelKind::Linear, 50.0, 0.01, 0.001, false),
    ("nonlinear-er-20", ModelKind::Mlp, 300.0, 0.01, 0.01, false),
    ("nonlinear-sf-20", ModelKind::Mlp, 200.0, 0.1, 0.1, false),
    ("nonlinear-er-30", ModelKind::Mlp, 500.0, 1.0, 0.01, false),
    ("nonlinear-sf-30", ModelKind::Mlp, 300.0, 0.01, 0.01, false),
    ("nonlinear-er-50", ModelKind::Mlp, 500.0, 0.01, 0.01, true),
    ("nonlinear-sf-50", ModelKind::Mlp, 300.0, 0.1, 0.01, false),
    ("nonlinear-er-70", ModelKind::Mlp, 700.0, 0.1, 0.01, true),
    ("nonlinear-sf-70", ModelKind::Mlp, 300.0, 0.01, 0.01, false),
    ("nonlinear-er-100", ModelKind::Mlp, 700.0, 0.1, 0.01, false),
    ("nonlinear-sf-100", ModelKind::Mlp, 700.0, 0.1, 0.01, false),
    ("syntren", ModelKind::Mlp, 300.0, 0.1, 0.01, false),
    ("sachs", ModelKind::Mlp, 1200.0, 0.1, 0.01, false),
];

impl TrainConfig {
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|p| p.0)
    }

    /// Defaults with a named tuned setting applied.
    pub fn preset(name: &str) -> Result<Self> {
        let &(_, model, lambda_s, scale_p, scale_theta, sparse_init) =
            PRESETS.iter().find(|p| p.0 == name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {name:?}; known: {}",
                    Self::preset_names().collect::<Vec<_>>().join(", ")
                ))
            })?;
        Ok(TrainConfig {
            model,
            lambda_s,
            scale_p,
            scale_theta,
            sparse_init,
            ..TrainConfig::default()
        })
    }

    /// Overrides fields with the keys present in a JSON object.
    pub fn merge_json(&self, overrides: &serde_json::Value) -> Result<Self> {
        let obj = overrides
            .as_object()
            .ok_or_else(|| Error::Config("training config must be a JSON object".into()))?;
        let mut base = serde_json::to_value(self)?;
        let map = base
            .as_object_mut()
            .expect("struct serializes to an object");
        for (k, v) in obj {
            if !map.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        let cfg: TrainConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior().validate()?;
        self.sampler()?;
        let positive = [
            ("chains", self.chains),
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("sinkhorn_max_iters", self.sinkhorn_max_iters),
            ("mc_samples", self.mc_samples),
            ("particles", self.particles),
            ("threads", self.threads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        for (name, v) in [
            ("sinkhorn_t", self.sinkhorn_t),
            ("sinkhorn_tol", self.sinkhorn_tol),
            ("gumbel_t", self.gumbel_t),
            ("vi_lr", self.vi_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("scale_p", self.scale_p),
            ("scale_theta", self.scale_theta),
            ("scale_w", self.scale_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!(
                "burn_in must lie in [0, 1), got {}",
                self.burn_in
            )));
        }
        Ok(())
    }

    pub fn prior(&self) -> PriorConfig {
        PriorConfig {
            alpha: self.alpha,
            lambda_s: self.lambda_s,
        }
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        SamplerConfig::from_learning_rate(self.lr, self.beta1, self.beta2)
    }

    pub fn relaxation(&self, d: usize) -> RelaxationConstants {
        RelaxationConstants {
            d,
            temperature: self.sinkhorn_t,
            max_iters: self.sinkhorn_max_iters,
            tol: self.sinkhorn_tol,
        }
    }

    /// Effective minibatch size for `n` rows.
    pub fn batch_size(&self, n: usize) -> usize {
        self.batch.min(n)
    }

    /// Number of iterations for a dataset of `n` rows.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_epoch = n.div_ceil(self.batch_size(n).max(1));
        let t = self.epochs * per_epoch.max(1);
        self.max_steps.map_or(t, |m| m.min(t))
    }
}
