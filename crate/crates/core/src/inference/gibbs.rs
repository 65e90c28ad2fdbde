use ndarray::{concatenate, Axis};

use crate::error::Result;
use crate::nocurl::ForwardMode;
use crate::scm::{Dataset, ScmModel};

use super::config::TrainConfig;
use super::energy::{grad_u, sample_batch, Target};
use super::particles::ParticleBuffer;
use super::sampler::sgmcmc_step;
use super::trainer::{
    all_finite, chain_rng, for_each_chain, is_numeric_failure, make_chains, progress, record,
    thread_pool, Chain, Mode, StepReport, TrainOutput, TrainStats,
};
use super::variational::{elbo, vi_sample_w, Adam, VariationalNet};

/// SG-MCMC over `(p, Theta)` with a variational posterior over masks.
///
/// Every iteration each chain draws `W ~ q_phi(W | p)` and takes one
/// sampler step on the energy with that mask; after all chains move, `phi`
/// takes one Adam ascent step on the ELBO averaged over the chains' current
/// states.
pub fn gibbs_train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let d = data.d();
    let n = data.n();
    let model = ScmModel::new(d, cfg.model);
    let n_theta = model.num_params();
    let target = Target {
        model: model.clone(),
        prior: cfg.prior(),
        consts: cfg.relaxation(d),
    };
    let sampler = cfg.sampler()?;
    let total = cfg.total_steps(n);
    let batch_size = cfg.batch_size(n);
    let mut buffer = ParticleBuffer::new(cfg.particles, cfg.chains, total, cfg.burn_in)?;
    let pool = thread_pool(cfg.threads)?;

    let mut trainer_rng = chain_rng(cfg.seed, 0);
    let net = VariationalNet::new(d);
    let mut phi = net.init(cfg.sparse_init, &mut trainer_rng);
    let mut adam = Adam::new(phi.len(), cfg.vi_lr);
    let mut chains = make_chains(&model, cfg, false)?;
    let mut stats = TrainStats::default();

    for step in 1..=total {
        let phi_now = &phi;
        let reports = for_each_chain(pool.as_ref(), &mut chains, |chain: &mut Chain| {
            let idx = sample_batch(n, batch_size, &mut chain.rng);
            let batch = data.rows(&idx);
            let attempt = (|| {
                let p = chain.p(d)?;
                let w = vi_sample_w(&net, phi_now, &p, cfg.gumbel_t, &mut chain.rng)
                    .hard
                    .to_f64();
                grad_u(
                    &target,
                    &p,
                    chain.theta(d, n_theta),
                    w.view(),
                    batch.view(),
                    n,
                    ForwardMode::Hard,
                )
            })();
            let eg = match attempt {
                Ok(eg) => eg,
                Err(e) if is_numeric_failure(&e) => {
                    chain.reinitialize(&model, cfg.alpha, false);
                    return Ok(StepReport {
                        reinitialized: true,
                        ..StepReport::default()
                    });
                }
                Err(e) => return Err(e),
            };
            let grad =
                concatenate(Axis(0), &[eg.grad_p.view(), eg.grad_theta.view()]).expect("1-d");
            if !eg.energy.is_finite() || !all_finite(&grad) {
                chain.reinitialize(&model, cfg.alpha, false);
                return Ok(StepReport {
                    reinitialized: true,
                    ..StepReport::default()
                });
            }
            sgmcmc_step(&mut chain.state, &grad, &sampler, &mut chain.rng)?;
            if !all_finite(&chain.state.position) {
                chain.reinitialize(&model, cfg.alpha, false);
                return Ok(StepReport {
                    reinitialized: true,
                    ..StepReport::default()
                });
            }
            Ok(StepReport {
                energy: eg.energy,
                reinitialized: false,
                sinkhorn_converged: eg.sinkhorn_converged,
            })
        })?;
        record(&mut stats, &reports);

        if buffer.should_store(step) {
            for chain in &chains {
                buffer.push(chain.snapshot(step, d, n_theta, false))?;
            }
        }

        // Variational phase: single writer after the barrier.
        let idx = sample_batch(n, batch_size, &mut trainer_rng);
        let batch = data.rows(&idx);
        let mut states = Vec::with_capacity(chains.len());
        for chain in &chains {
            if let Ok(p) = chain.p(d) {
                if p.check_distinct().is_ok() {
                    states.push((p, chain.theta(d, n_theta).to_vec()));
                }
            }
        }
        if !states.is_empty() {
            let refs: Vec<_> = states.iter().map(|(p, t)| (p, t.as_slice())).collect();
            let est = elbo(
                &target,
                &net,
                &phi,
                &refs,
                batch.view(),
                n,
                cfg.mc_samples,
                cfg.gumbel_t,
                &mut trainer_rng,
            )?;
            if est.grad.iter().all(|g| g.is_finite()) {
                adam.ascend(&mut phi, &est.grad);
            } else {
                log::warn!("skipping a variational step with a non-finite gradient at step {step}");
            }
        }
        progress(step, total, &stats);
    }

    Ok(TrainOutput {
        mode: Mode::Gibbs,
        model,
        config: cfg.clone(),
        buffer,
        phi: Some(phi),
        stats,
    })
}
