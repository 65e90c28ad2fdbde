//! Gaussian additive-noise structural equation models.
//!
//! `x_i = f_i(x_pa(i)) + eps_i` with `eps_i ~ N(0, sigma_i^2)`. Inference
//! models take a soft `d x d` mask in place of the graph so that the
//! likelihood can be differentiated with respect to edge weights.

mod dataset;
mod model;
mod truth;

pub use dataset::Dataset;
pub use model::{ModelKind, NetworkArchitecture, ScmGradient, ScmModel};
pub use truth::{
    ancestral_sample, make_ground_truth, GroundTruth, Mechanism, MlpNode, MLP_GROUND_TRUTH_HIDDEN,
};

/// `log N(r; 0, var)`.
#[inline]
pub(crate) fn gaussian_log_density(r: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var)
}
