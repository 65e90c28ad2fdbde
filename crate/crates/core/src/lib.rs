//! Bayesian causal discovery by sampling DAGs and structural-equation
//! parameters from their joint posterior.
//!
//! A DAG is represented implicitly by a binary edge mask `W` and a vector of
//! node potentials `p`: edge `i -> j` exists iff `W[i][j] = 1` and
//! `p_i > p_j`. Potentials and model parameters are sampled with a
//! preconditioned stochastic-gradient MCMC sampler, where gradients with
//! respect to `p` flow through a Sinkhorn relaxation of the sorting
//! permutation. The mask is either fit with a Bernoulli variational posterior
//! (Gibbs scheme) or sampled through continuous logits (joint scheme).
//!
//! Modules:
//! - [`graphs`]: DAG types, random graph families, CPDAGs, enumeration.
//! - [`nocurl`]: the `(W, p) -> DAG` map, Sinkhorn, Hungarian rounding.
//! - [`scm`]: Gaussian additive-noise models, likelihoods and gradients.
//! - [`inference`]: priors, the sampler, variational mask posterior, trainers.
//! - [`eval`]: posterior-quality metrics and exact BGe posteriors.
//! - [`io`]: file formats shared with the command-line driver.

pub mod error;
pub mod eval;
pub mod graphs;
pub mod inference;
pub mod io;
pub mod nn;
pub mod nocurl;
pub mod scm;

pub use error::{Error, Result};
