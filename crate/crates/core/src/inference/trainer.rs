use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::DagAdjacency;
use crate::nocurl::{tau, EdgeMask, NodePotentials};
use crate::scm::{Dataset, ScmModel};

use super::config::TrainConfig;
use super::energy::Target;
use super::joint::resample_joint_mask;
use super::particles::{Particle, ParticleBuffer};
use super::sampler::{NoiseBlock, SamplerState};
use super::variational::{vi_sample_w, VariationalNet};

/// Which training loop produced a set of particles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// SG-MCMC on `(p, Theta)` interleaved with variational updates of `q(W | p)`.
    Gibbs,
    /// SG-MCMC on `(p, Theta, W~)` with continuous mask logits.
    Joint,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gibbs" => Ok(Mode::Gibbs),
            "joint" => Ok(Mode::Joint),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected gibbs or joint)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gibbs => "gibbs",
            Mode::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: usize,
    pub reinitializations: usize,
    pub sinkhorn_unconverged: usize,
    /// Mean energy over chains at the last iteration.
    pub final_energy: f64,
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub mode: Mode,
    pub model: ScmModel,
    pub config: TrainConfig,
    pub buffer: ParticleBuffer,
    /// Variational parameters (Gibbs mode only).
    pub phi: Option<Vec<f64>>,
    pub stats: TrainStats,
}

/// A posterior graph draw and the index of the particle it came from.
#[derive(Clone, Debug)]
pub struct GraphSample {
    pub graph: DagAdjacency,
    pub particle: usize,
}

impl TrainOutput {
    pub fn target(&self) -> Target {
        Target {
            model: self.model.clone(),
            prior: self.config.prior(),
            consts: self.config.relaxation(self.model.d()),
        }
    }

    /// `per_particle` graphs per stored particle.
    ///
    /// Gibbs particles draw `W ~ q_phi(W | p)`. Joint particles draw
    /// `mc_samples` masks from `Ber(sigmoid(W~))` and keep one chosen with
    /// probability proportional to its likelihood weight on `data`.
    pub fn sample_graphs<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        per_particle: usize,
        rng: &mut R,
    ) -> Result<Vec<GraphSample>> {
        graph_samples(
            self.mode,
            &self.target(),
            self.phi.as_deref(),
            &self.buffer.to_vec(),
            data,
            self.config.mc_samples,
            self.config.gumbel_t,
            per_particle,
            rng,
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub fn graph_samples<R: Rng + ?Sized>(
    mode: Mode,
    target: &Target,
    phi: Option<&[f64]>,
    particles: &[Particle],
    data: &Dataset,
    mc_samples: usize,
    gumbel_t: f64,
    per_particle: usize,
    rng: &mut R,
) -> Result<Vec<GraphSample>> {
    let d = target.d();
    let net = VariationalNet::new(d);
    let mut out = Vec::with_capacity(particles.len() * per_particle);
    for (k, particle) in particles.iter().enumerate() {
        let p = particle.potentials()?;
        for _ in 0..per_particle {
            let mask: EdgeMask = match mode {
                Mode::Gibbs => {
                    let phi = phi.ok_or_else(|| {
                        Error::Contract("gibbs particles need variational parameters".into())
                    })?;
                    net.check(phi)?;
                    vi_sample_w(&net, phi, &p, gumbel_t, rng).hard
                }
                Mode::Joint => resample_joint_mask(target, particle, data, mc_samples, rng)?,
            };
            out.push(GraphSample {
                graph: tau(&mask, &p)?,
                particle: k,
            });
        }
    }
    Ok(out)
}

/// Independent stream `stream` of the master seed.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One SG-MCMC chain.
pub(crate) struct Chain {
    pub id: usize,
    pub state: SamplerState,
    pub rng: ChaCha8Rng,
}

/// Outcome of advancing one chain by one iteration.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct StepReport {
    pub energy: f64,
    pub reinitialized: bool,
    pub sinkhorn_converged: bool,
}

/// Position layout `[p | Theta | extra]`.
pub(crate) fn initial_position<R: Rng + ?Sized>(
    model: &ScmModel,
    alpha: f64,
    extra: Option<usize>,
    rng: &mut R,
) -> Array1<f64> {
    let d = model.d();
    let sd = alpha.sqrt();
    let p = Array1::from_shape_fn(d, |_| sd * rng.sample::<f64, _>(StandardNormal));
    let theta = model.init_params(rng);
    let w = Array1::from_shape_fn(extra.unwrap_or(0), |_| rng.sample::<f64, _>(StandardNormal));
    ndarray::concatenate(ndarray::Axis(0), &[p.view(), theta.view(), w.view()])
        .expect("1-d concatenation")
}

pub(crate) fn noise_blocks(
    d: usize,
    n_theta: usize,
    cfg: &TrainConfig,
    with_w: bool,
) -> Vec<NoiseBlock> {
    let mut blocks = vec![
        NoiseBlock {
            range: 0..d,
            scale: cfg.scale_p,
        },
        NoiseBlock {
            range: d..d + n_theta,
            scale: cfg.scale_theta,
        },
    ];
    if with_w {
        blocks.push(NoiseBlock {
            range: d + n_theta..d + n_theta + d * d,
            scale: cfg.scale_w,
        });
    }
    blocks
}

pub(crate) fn make_chains(model: &ScmModel, cfg: &TrainConfig, with_w: bool) -> Result<Vec<Chain>> {
    let d = model.d();
    let n_theta = model.num_params();
    let blocks = noise_blocks(d, n_theta, cfg, with_w);
    (0..cfg.chains)
        .map(|id| {
            let mut rng = chain_rng(cfg.seed, id as u64 + 1);
            let pos = initial_position(model, cfg.alpha, with_w.then_some(d * d), &mut rng);
            Ok(Chain {
                id,
                state: SamplerState::new(pos, &blocks)?,
                rng,
            })
        })
        .collect()
}

impl Chain {
    pub fn reinitialize(&mut self, model: &ScmModel, alpha: f64, with_w: bool) {
        let d = model.d();
        let pos = initial_position(model, alpha, with_w.then_some(d * d), &mut self.rng);
        log::warn!(
            "chain {} hit a non-finite state and was reinitialized",
            self.id
        );
        self.state.restart(pos);
    }

    pub fn p(&self, d: usize) -> Result<NodePotentials> {
        NodePotentials::new(self.state.position.slice(s![..d]).to_owned())
    }

    pub fn theta(&self, d: usize, n_theta: usize) -> ArrayView1<'_, f64> {
        self.state.position.slice(s![d..d + n_theta])
    }

    pub fn w_logits(&self, d: usize, n_theta: usize) -> Array2<f64> {
        self.state
            .position
            .slice(s![d + n_theta..d + n_theta + d * d])
            .to_owned()
            .into_shape_with_order((d, d))
            .expect("d*d logits")
    }

    pub fn snapshot(&self, step: usize, d: usize, n_theta: usize, with_w: bool) -> Particle {
        let pos = &self.state.position;
        Particle {
            chain: self.id,
            step,
            p: pos.slice(s![..d]).to_vec(),
            theta: pos.slice(s![d..d + n_theta]).to_vec(),
            w_logits: with_w.then(|| pos.slice(s![d + n_theta..d + n_theta + d * d]).to_vec()),
        }
    }
}

/// Errors that mark a numerically broken chain rather than a bug.
pub(crate) fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::Numeric(_) | Error::DegeneratePotential { .. })
}

/// Runs `f` on every chain, on a dedicated pool when more than one thread
/// is requested. Reports come back in chain order.
pub(crate) fn for_each_chain<F>(
    pool: Option<&rayon::ThreadPool>,
    chains: &mut [Chain],
    f: F,
) -> Result<Vec<StepReport>>
where
    F: Fn(&mut Chain) -> Result<StepReport> + Sync,
{
    match pool {
        Some(pool) => pool.install(|| chains.par_iter_mut().map(&f).collect()),
        None => chains.iter_mut().map(f).collect(),
    }
}

pub(crate) fn thread_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot build a pool of {threads} threads: {e}")))
}

pub(crate) fn all_finite(v: &Array1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Folds per-chain reports into the running stats.
pub(crate) fn record(stats: &mut TrainStats, reports: &[StepReport]) {
    stats.steps += 1;
    stats.reinitializations += reports.iter().filter(|r| r.reinitialized).count();
    stats.sinkhorn_unconverged += reports
        .iter()
        .filter(|r| !r.reinitialized && !r.sinkhorn_converged)
        .count();
    let live: Vec<f64> = reports
        .iter()
        .filter(|r| !r.reinitialized)
        .map(|r| r.energy)
        .collect();
    if !live.is_empty() {
        stats.final_energy = live.iter().sum::<f64>() / live.len() as f64;
    }
}

/// Dispatches to the requested training loop.
pub fn train(data: &Dataset, cfg: &TrainConfig, mode: Mode) -> Result<TrainOutput> {
    match mode {
        Mode::Gibbs => super::gibbs::gibbs_train(data, cfg),
        Mode::Joint => super::joint::joint_train(data, cfg),
    }
}

pub(crate) fn progress(step: usize, total: usize, stats: &TrainStats) {
    let tenth = (total / 10).max(1);
    if step.is_multiple_of(tenth) || step == total {
        log::info!(
            "step {step}/{total}: mean energy {:.4}, reinitializations {}",
            stats.final_energy,
            stats.reinitializations
        );
    }
}
