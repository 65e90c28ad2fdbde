use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graphs::DagAdjacency;
use crate::nocurl::{tau, EdgeMask, ForwardMode, NodePotentials, Orientation};
use crate::scm::{Dataset, ScmModel};

use super::config::TrainConfig;
use super::energy::{minibatch_scale, sample_batch, scaled_likelihood, Target};
use super::particles::{Particle, ParticleBuffer};
use super::prior::{log_prior_p, log_prior_theta};
use super::sampler::sgmcmc_step;
use super::trainer::{
    all_finite, for_each_chain, is_numeric_failure, make_chains, progress, record, thread_pool,
    Chain, Mode, StepReport, TrainOutput, TrainStats,
};
use super::variational::{
    concrete_with_noise, enumerate_masks, log_sum_exp, logistic_noise, sigmoid,
};

/// Energy and gradients of the continuous-logit joint target.
#[derive(Clone, Debug)]
pub struct JointGrad {
    pub energy: f64,
    pub grad_p: Array1<f64>,
    pub grad_theta: Array1<f64>,
    pub grad_w: Array2<f64>,
    /// `log p(D | W_k, p, Theta) - lambda_s |G_k|` for each draw.
    pub log_weights: Vec<f64>,
    pub sinkhorn_converged: bool,
}

/// Gradient of
///
/// ```text
/// U = -log p(p) - log p(Theta) - log p(W~)
///     - log (1/K) sum_k exp(loglik(W_k) - lambda_s |G_k|)
/// ```
///
/// with `W_k` binary concrete draws of `Ber(sigmoid(W~))` built from the
/// given logistic `noise`. The weighted sum over draws uses softmax weights.
/// In [`ForwardMode::Hard`] the draws are thresholded and `p` and `W~`
/// receive straight-through gradients; in [`ForwardMode::Soft`] both the
/// mask and the orientation are relaxed and the gradient is exact.
#[allow(clippy::too_many_arguments)]
pub fn joint_grad_u(
    target: &Target,
    p: &NodePotentials,
    theta: ArrayView1<f64>,
    w_logits: ArrayView2<f64>,
    batch: ArrayView2<f64>,
    n_total: usize,
    noise: &[Array2<f64>],
    temperature: f64,
    mode: ForwardMode,
) -> Result<JointGrad> {
    let d = target.d();
    let theta_s = theta
        .as_slice()
        .ok_or_else(|| Error::Dimension("theta must be contiguous".into()))?;
    target.check_state(p, theta_s)?;
    if w_logits.dim() != (d, d) {
        return Err(Error::Dimension(format!(
            "mask logits are {:?}, expected {d}x{d}",
            w_logits.dim()
        )));
    }
    if noise.is_empty() {
        return Err(Error::Config("mc_samples must be at least 1".into()));
    }
    let orient = Orientation::new(p, &target.consts, mode)?;
    let a = &orient.forward;
    let scale = minibatch_scale(n_total, batch.nrows());
    let lambda = target.prior.lambda_s;

    struct Draw {
        w: Array2<f64>,
        slope: Array2<f64>,
        d_g: Array2<f64>,
        d_theta: Array1<f64>,
    }
    let mut draws = Vec::with_capacity(noise.len());
    let mut log_weights = Vec::with_capacity(noise.len());
    for eps in noise {
        let sample = concrete_with_noise(w_logits, eps.clone(), temperature);
        let w = match mode {
            ForwardMode::Hard => sample.hard.to_f64(),
            ForwardMode::Soft => sample.soft.clone(),
        };
        let g = &w * a;
        let (ll, mask_grad, theta_grad) =
            scaled_likelihood(&target.model, batch, scale, g.view(), theta_s, true)?;
        let mut d_g = mask_grad - lambda;
        for i in 0..d {
            d_g[[i, i]] = 0.0;
        }
        log_weights.push(ll - lambda * g.sum());
        draws.push(Draw {
            w,
            slope: sample.slope(temperature),
            d_g,
            d_theta: theta_grad.expect("requested"),
        });
    }
    let lse = log_sum_exp(&log_weights);
    if !lse.is_finite() {
        return Err(Error::Numeric("all mask draws have zero likelihood".into()));
    }
    let mut grad_a = Array2::<f64>::zeros((d, d));
    let mut grad_w = Array2::<f64>::zeros((d, d));
    let mut grad_theta = Array1::<f64>::zeros(theta.len());
    for (draw, lw) in draws.iter().zip(&log_weights) {
        let omega = (lw - lse).exp();
        grad_a.scaled_add(omega, &(&draw.d_g * &draw.w));
        grad_w.scaled_add(omega, &(&(&draw.d_g * a) * &draw.slope));
        grad_theta.scaled_add(omega, &draw.d_theta);
    }
    let alpha = target.prior.alpha;
    let log_mean = lse - (noise.len() as f64).ln();
    let energy =
        -log_prior_p(p.view(), alpha) - log_prior_theta(theta) - log_prior_w(w_logits) - log_mean;
    let grad_p = p.as_array() / alpha - orient.backward(grad_a.view());
    Ok(JointGrad {
        energy,
        grad_p,
        grad_theta: &theta - &grad_theta,
        grad_w: &w_logits - &grad_w,
        log_weights,
        sinkhorn_converged: orient.relaxed.soft.converged,
    })
}

/// Standard normal log-density over all `d x d` logits.
fn log_prior_w(w: ArrayView2<f64>) -> f64 {
    log_prior_theta(ArrayView1::from(w.as_slice().expect("standard layout")).view())
}

/// [`joint_grad_u`] on fresh noise with hard draws.
#[allow(clippy::too_many_arguments)]
pub fn joint_grad_u_sampled<R: Rng + ?Sized>(
    target: &Target,
    p: &NodePotentials,
    theta: ArrayView1<f64>,
    w_logits: ArrayView2<f64>,
    batch: ArrayView2<f64>,
    n_total: usize,
    mc_samples: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<JointGrad> {
    let noise: Vec<_> = (0..mc_samples)
        .map(|_| logistic_noise(target.d(), rng))
        .collect();
    joint_grad_u(
        target,
        p,
        theta,
        w_logits,
        batch,
        n_total,
        &noise,
        temperature,
        ForwardMode::Hard,
    )
}

/// Pure SG-MCMC over `(p, Theta, W~)`.
pub fn joint_train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
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
    let mut chains = make_chains(&model, cfg, true)?;
    let mut stats = TrainStats::default();

    for step in 1..=total {
        let reports = for_each_chain(pool.as_ref(), &mut chains, |chain: &mut Chain| {
            let idx = sample_batch(n, batch_size, &mut chain.rng);
            let batch = data.rows(&idx);
            let attempt = (|| {
                let p = chain.p(d)?;
                let w = chain.w_logits(d, n_theta);
                let theta = chain.theta(d, n_theta).to_owned();
                joint_grad_u_sampled(
                    &target,
                    &p,
                    theta.view(),
                    w.view(),
                    batch.view(),
                    n,
                    cfg.mc_samples,
                    cfg.gumbel_t,
                    &mut chain.rng,
                )
            })();
            let jg = match attempt {
                Ok(jg) => jg,
                Err(e) if is_numeric_failure(&e) => {
                    chain.reinitialize(&model, cfg.alpha, true);
                    return Ok(StepReport {
                        reinitialized: true,
                        ..StepReport::default()
                    });
                }
                Err(e) => return Err(e),
            };
            let gw = jg.grad_w.into_shape_with_order(d * d).expect("d*d");
            let grad = concatenate(
                Axis(0),
                &[jg.grad_p.view(), jg.grad_theta.view(), gw.view()],
            )
            .expect("1-d");
            if !jg.energy.is_finite() || !all_finite(&grad) {
                chain.reinitialize(&model, cfg.alpha, true);
                return Ok(StepReport {
                    reinitialized: true,
                    ..StepReport::default()
                });
            }
            sgmcmc_step(&mut chain.state, &grad, &sampler, &mut chain.rng)?;
            if !all_finite(&chain.state.position) {
                chain.reinitialize(&model, cfg.alpha, true);
                return Ok(StepReport {
                    reinitialized: true,
                    ..StepReport::default()
                });
            }
            Ok(StepReport {
                energy: jg.energy,
                reinitialized: false,
                sinkhorn_converged: jg.sinkhorn_converged,
            })
        })?;
        record(&mut stats, &reports);
        if buffer.should_store(step) {
            for chain in &chains {
                buffer.push(chain.snapshot(step, d, n_theta, true))?;
            }
        }
        progress(step, total, &stats);
    }
    Ok(TrainOutput {
        mode: Mode::Joint,
        model,
        config: cfg.clone(),
        buffer,
        phi: None,
        stats,
    })
}

fn particle_logits(particle: &Particle, d: usize) -> Result<Array2<f64>> {
    let w = particle.w_logits.as_ref().ok_or_else(|| {
        Error::Contract("particle has no mask logits; it was not produced by joint training".into())
    })?;
    Array2::from_shape_vec((d, d), w.clone()).map_err(|e| Error::Dimension(e.to_string()))
}

/// `log p(D, Theta | p, W)` up to terms constant in `W`.
fn mask_log_weight(
    target: &Target,
    data: ArrayView2<f64>,
    g: &DagAdjacency,
    theta: &[f64],
) -> Result<f64> {
    let gf = g.to_f64();
    Ok(target.model.log_likelihood(data, gf.view(), theta)?
        - target.prior.lambda_s * g.num_edges() as f64)
}

fn bernoulli_draw<R: Rng + ?Sized>(logits: &Array2<f64>, rng: &mut R) -> EdgeMask {
    let d = logits.nrows();
    let entries = (0..d * d)
        .map(|k| {
            let (i, j) = (k / d, k % d);
            u8::from(i != j && rng.random::<f64>() < sigmoid(logits[[i, j]]))
        })
        .collect();
    EdgeMask::from_entries(d, entries).expect("binary entries")
}

/// Self-normalized ratio for one particle from graphs and their log weights.
fn weighted_ratio(log_w: &[f64], values: &[f64]) -> Result<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(
            "degenerate importance weights: every mask has zero weight".into(),
        ));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let num: f64 = w.iter().zip(values).map(|(a, b)| a * b).sum();
    let den: f64 = w.iter().sum();
    Ok(num / den)
}

/// Posterior expectation of `f(G, particle)` from joint particles.
///
/// For each particle, `mc_samples` masks are drawn from `Ber(sigmoid(W~))`
/// and weighted by `p(D, Theta | p, W)`; the per-particle ratios are then
/// averaged.
pub fn posterior_expectation<R, F>(
    target: &Target,
    particles: &[Particle],
    data: &Dataset,
    f: F,
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(&DagAdjacency, &Particle) -> f64,
{
    if mc_samples == 0 {
        return Err(Error::Config("mc_samples must be at least 1".into()));
    }
    expectation_over(target, particles, data, &f, |logits, visit| {
        for _ in 0..mc_samples {
            visit(&bernoulli_draw(logits, rng), 0.0)?;
        }
        Ok(())
    })
}

/// [`posterior_expectation`] with each inner expectation computed by
/// enumerating every mask.
pub fn posterior_expectation_exact<F>(
    target: &Target,
    particles: &[Particle],
    data: &Dataset,
    f: F,
) -> Result<f64>
where
    F: Fn(&DagAdjacency, &Particle) -> f64,
{
    expectation_over(target, particles, data, &f, |logits, visit| {
        enumerate_masks(logits.view(), |mask, log_q| {
            let entries = mask.iter().map(|&v| u8::from(v > 0.5)).collect();
            visit(
                &EdgeMask::from_entries(logits.nrows(), entries).expect("binary"),
                log_q,
            )
        })
    })
}

/// `draws(logits, visit)` calls `visit(mask, log_q)` once per inner draw,
/// where `log_q` is an extra log weight (zero for Monte Carlo draws).
fn expectation_over<F, D>(
    target: &Target,
    particles: &[Particle],
    data: &Dataset,
    f: &F,
    mut draws: D,
) -> Result<f64>
where
    F: Fn(&DagAdjacency, &Particle) -> f64,
    D: FnMut(&Array2<f64>, &mut dyn FnMut(&EdgeMask, f64) -> Result<()>) -> Result<()>,
{
    if particles.is_empty() {
        return Err(Error::Config("no particles to average".into()));
    }
    let d = target.d();
    let mut total = 0.0;
    for particle in particles {
        let p = particle.potentials()?;
        target.check_state(&p, &particle.theta)?;
        let logits = particle_logits(particle, d)?;
        let mut log_w = Vec::new();
        let mut values = Vec::new();
        draws(&logits, &mut |mask, log_q| {
            let g = tau(mask, &p)?;
            log_w.push(log_q + mask_log_weight(target, data.view(), &g, &particle.theta)?);
            values.push(f(&g, particle));
            Ok(())
        })?;
        total += weighted_ratio(&log_w, &values)?;
    }
    Ok(total / particles.len() as f64)
}

/// One mask for a joint particle: `mc_samples` Bernoulli draws, one kept
/// with probability proportional to its weight.
pub(crate) fn resample_joint_mask<R: Rng + ?Sized>(
    target: &Target,
    particle: &Particle,
    data: &Dataset,
    mc_samples: usize,
    rng: &mut R,
) -> Result<EdgeMask> {
    let d = target.d();
    let p = particle.potentials()?;
    target.check_state(&p, &particle.theta)?;
    let logits = particle_logits(particle, d)?;
    let mut masks = Vec::with_capacity(mc_samples.max(1));
    let mut log_w = Vec::with_capacity(mc_samples.max(1));
    for _ in 0..mc_samples.max(1) {
        let m = bernoulli_draw(&logits, rng);
        log_w.push(mask_log_weight(
            target,
            data.view(),
            &tau(&m, &p)?,
            &particle.theta,
        )?);
        masks.push(m);
    }
    let lse = log_sum_exp(&log_w);
    if !lse.is_finite() {
        return Err(Error::Numeric(
            "degenerate importance weights: every mask has zero weight".into(),
        ));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (m, lw) in masks.iter().zip(&log_w) {
        acc += (lw - lse).exp();
        if u < acc {
            return Ok(m.clone());
        }
    }
    Ok(masks.pop().expect("at least one draw"))
}
