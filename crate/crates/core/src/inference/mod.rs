//! Posterior sampling over `(W, p, Theta)`.
//!
//! Two training loops share the sampler and energy code: [`gibbs_train`]
//! alternates SG-MCMC on `(p, Theta)` with a variational posterior over the
//! edge mask, and [`joint_train`] samples continuous mask logits alongside.

mod config;
mod energy;
mod gibbs;
mod joint;
mod particles;
mod prior;
mod sampler;
mod trainer;
mod variational;

pub use config::TrainConfig;
pub use energy::{grad_u, minibatch_scale, sample_batch, EnergyGrad, Target};
pub use gibbs::gibbs_train;
pub use joint::{
    joint_grad_u, joint_grad_u_sampled, joint_train, posterior_expectation,
    posterior_expectation_exact, JointGrad,
};
pub use particles::{Particle, ParticleBuffer};
pub use prior::{
    edge_prior_probability, log_prior, log_prior_p, log_prior_theta, PriorConfig, EDGE_PRIOR_LOGIT,
};
pub use sampler::{sgmcmc_step, NoiseBlock, SamplerConfig, SamplerState};
pub use trainer::{chain_rng, graph_samples, train, GraphSample, Mode, TrainOutput, TrainStats};
pub use variational::{
    concrete_sample, concrete_with_noise, elbo, elbo_exact, exact_log_evidence, kl_to_edge_prior,
    logistic_noise, vi_sample_w, Adam, ElboEstimate, MaskSample, VariationalNet, VI_HIDDEN,
    VI_HIDDEN_LAYERS,
};
