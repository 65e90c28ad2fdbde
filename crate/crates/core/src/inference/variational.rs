use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec};
use crate::nocurl::{EdgeMask, NodePotentials};

use super::energy::{minibatch_scale, scaled_likelihood, Target};
use super::prior::{edge_prior_probability, log_prior_p, log_prior_theta, EDGE_PRIOR_LOGIT};

pub const VI_HIDDEN: usize = 48;
pub const VI_HIDDEN_LAYERS: usize = 2;

/// Largest number of free mask entries enumerated by the exact routines.
pub const MAX_ENUMERATED_ENTRIES: usize = 16;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// The network `mu_phi` from layer-normalized potentials to `d x d` edge
/// logits.
#[derive(Clone, Debug)]
pub struct VariationalNet {
    d: usize,
    mlp: Mlp,
}

impl VariationalNet {
    pub fn new(d: usize) -> Self {
        let spec = MlpSpec {
            input: d,
            hidden: VI_HIDDEN,
            hidden_layers: VI_HIDDEN_LAYERS,
            output: d * d,
            input_norm: true,
            layer_norm: true,
            residual: true,
        };
        VariationalNet {
            d,
            mlp: Mlp::new(spec, 0),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// Random initialization; `sparse_init` shifts every output logit by -1.
    pub fn init<R: Rng + ?Sized>(&self, sparse_init: bool, rng: &mut R) -> Vec<f64> {
        let mut phi = vec![0.0; self.num_params()];
        self.mlp.init(&mut phi, rng);
        if sparse_init {
            let end = self.mlp.end();
            for v in &mut phi[end - self.d * self.d..end] {
                *v -= 1.0;
            }
        }
        phi
    }

    pub fn check(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "phi has {} entries, expected {}",
                phi.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    /// Edge logits for one potential vector.
    pub fn logits(&self, phi: &[f64], p: &NodePotentials) -> Array2<f64> {
        let x = p.view().insert_axis(ndarray::Axis(0));
        let (out, _) = self.mlp.forward(phi, x);
        out.into_shape_with_order((self.d, self.d))
            .expect("d*d outputs")
    }

    /// Adds to `grad` the parameter gradient of `sum(grad_logits ⊙ logits(p))`.
    fn accumulate(
        &self,
        phi: &[f64],
        p: &NodePotentials,
        grad_logits: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let x = p.view().insert_axis(ndarray::Axis(0));
        let (_, cache) = self.mlp.forward(phi, x);
        let g = grad_logits
            .to_shape((1, self.d * self.d))
            .expect("d*d")
            .to_owned();
        self.mlp.backward(phi, &cache, g, Some(grad));
    }
}

/// A binary concrete draw and its hard threshold.
#[derive(Clone, Debug)]
pub struct MaskSample {
    /// `1[logit + noise > 0]`, diagonal zeroed.
    pub hard: EdgeMask,
    /// `sigmoid((logit + noise) / temperature)`, diagonal zeroed.
    pub soft: Array2<f64>,
    /// Logistic noise used for the draw.
    pub noise: Array2<f64>,
}

impl MaskSample {
    /// `d soft / d logit`, the straight-through factor for the hard draw.
    pub fn slope(&self, temperature: f64) -> Array2<f64> {
        self.soft.mapv(|y| y * (1.0 - y) / temperature)
    }
}

/// `log u - log(1 - u)` for `u ~ U(0, 1)`.
pub fn logistic_noise<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((d, d), |_| {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        u.ln() - (-u).ln_1p()
    })
}

/// Relaxed Bernoulli draw with the given logistic noise.
pub fn concrete_with_noise(
    logits: ArrayView2<f64>,
    noise: Array2<f64>,
    temperature: f64,
) -> MaskSample {
    let d = logits.nrows();
    let mut entries = vec![0u8; d * d];
    let mut soft = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let z = logits[[i, j]] + noise[[i, j]];
            soft[[i, j]] = sigmoid(z / temperature);
            entries[i * d + j] = u8::from(z > 0.0);
        }
    }
    let hard = EdgeMask::from_entries(d, entries).expect("binary entries");
    MaskSample { hard, soft, noise }
}

pub fn concrete_sample<R: Rng + ?Sized>(
    logits: ArrayView2<f64>,
    temperature: f64,
    rng: &mut R,
) -> MaskSample {
    let noise = logistic_noise(logits.nrows(), rng);
    concrete_with_noise(logits, noise, temperature)
}

/// `W ~ q_phi(W | p)`.
pub fn vi_sample_w<R: Rng + ?Sized>(
    net: &VariationalNet,
    phi: &[f64],
    p: &NodePotentials,
    temperature: f64,
    rng: &mut R,
) -> MaskSample {
    concrete_sample(net.logits(phi, p).view(), temperature, rng)
}

/// `KL(Ber(sigmoid(logit)) || Ber(sigmoid(-1/2)))` summed over off-diagonal
/// entries, and its gradient with respect to the logits.
pub fn kl_to_edge_prior(logits: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let d = logits.nrows();
    let mut grad = Array2::zeros((d, d));
    let mut kl = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let a = logits[[i, j]];
            kl += bernoulli_kl(a, EDGE_PRIOR_LOGIT);
            let q = sigmoid(a);
            grad[[i, j]] = q * (1.0 - q) * (a - EDGE_PRIOR_LOGIT);
        }
    }
    (kl, grad)
}

/// KL between Bernoullis given by their logits, stable for large logits.
fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let q = sigmoid(a);
    // log q - log pi = -softplus(-a) + softplus(-b), and similarly for 1 - q.
    let log_ratio_one = softplus(-b) - softplus(-a);
    let log_ratio_zero = softplus(b) - softplus(a);
    let mut kl = 0.0;
    if q > 0.0 {
        kl += q * log_ratio_one;
    }
    if q < 1.0 {
        kl += (1.0 - q) * log_ratio_zero;
    }
    kl
}

/// `log p(D, p, Theta | W)` up to the mask density: the scaled
/// log-likelihood, the sparsity penalty and the `p`/`Theta` priors.
fn conditional_log_joint(
    target: &Target,
    p: &NodePotentials,
    theta: &[f64],
    g: ArrayView2<f64>,
    batch: ArrayView2<f64>,
    scale: f64,
) -> Result<f64> {
    let ll = if batch.nrows() == 0 {
        0.0
    } else {
        scale * target.model.log_likelihood(batch, g, theta)?
    };
    Ok(ll - target.prior.lambda_s * g.sum()
        + log_prior_p(p.view(), target.prior.alpha)
        + log_prior_theta(ndarray::ArrayView1::from(theta)))
}

/// Hard orientation `1[p_i > p_j]`.
fn hard_orientation(p: &NodePotentials) -> Result<Array2<f64>> {
    p.check_distinct()?;
    let d = p.d();
    let v = p.view();
    Ok(Array2::from_shape_fn((d, d), |(i, j)| {
        if v[i] > v[j] {
            1.0
        } else {
            0.0
        }
    }))
}

/// Monte Carlo ELBO and its ascent direction in `phi`.
#[derive(Clone, Debug)]
pub struct ElboEstimate {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// ELBO averaged over the given `(p, Theta)` states.
///
/// The expectation term uses hard draws with straight-through gradients
/// through the concrete relaxation; the KL term is exact.
#[allow(clippy::too_many_arguments)]
pub fn elbo<R: Rng + ?Sized>(
    target: &Target,
    net: &VariationalNet,
    phi: &[f64],
    states: &[(&NodePotentials, &[f64])],
    batch: ArrayView2<f64>,
    n_total: usize,
    mc_samples: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<ElboEstimate> {
    if mc_samples == 0 {
        return Err(Error::Config("mc_samples must be at least 1".into()));
    }
    if states.is_empty() {
        return Err(Error::Config("elbo needs at least one state".into()));
    }
    net.check(phi)?;
    let d = target.d();
    let scale = minibatch_scale(n_total, batch.nrows());
    let lambda = target.prior.lambda_s;
    let mut grad = vec![0.0; phi.len()];
    let mut value = 0.0;
    let weight = 1.0 / states.len() as f64;
    for &(p, theta) in states {
        target.check_state(p, theta)?;
        let orient = hard_orientation(p)?;
        let logits = net.logits(phi, p);
        let mut grad_logits = Array2::<f64>::zeros((d, d));
        let mut expect = 0.0;
        for _ in 0..mc_samples {
            let sample = concrete_sample(logits.view(), temperature, rng);
            let g = &sample.hard.to_f64() * &orient;
            let (f, mask_grad, _) =
                scaled_likelihood(&target.model, batch, scale, g.view(), theta, false)?;
            let d_w = (&mask_grad - lambda) * &orient;
            grad_logits += &(&d_w * &sample.slope(temperature));
            expect += f - lambda * g.sum();
        }
        expect /= mc_samples as f64;
        grad_logits /= mc_samples as f64;
        let (kl, kl_grad) = kl_to_edge_prior(logits.view());
        grad_logits -= &kl_grad;
        for i in 0..d {
            grad_logits[[i, i]] = 0.0;
        }
        let priors = log_prior_p(p.view(), target.prior.alpha)
            + log_prior_theta(ndarray::ArrayView1::from(theta));
        value += weight * (expect + priors - kl);
        let mut g_state = vec![0.0; phi.len()];
        net.accumulate(phi, p, &grad_logits, &mut g_state);
        for (a, b) in grad.iter_mut().zip(&g_state) {
            *a += weight * b;
        }
    }
    Ok(ElboEstimate { value, grad })
}

/// Off-diagonal positions in row-major order.
fn free_entries(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Calls `visit(mask, log q(mask))` for every off-diagonal mask under
/// independent Bernoullis with the given logits.
pub(crate) fn enumerate_masks(
    logits: ArrayView2<f64>,
    mut visit: impl FnMut(&Array2<f64>, f64) -> Result<()>,
) -> Result<()> {
    let d = logits.nrows();
    let free = free_entries(d);
    if free.len() > MAX_ENUMERATED_ENTRIES {
        return Err(Error::SizeLimit(format!(
            "exact enumeration over {} mask entries exceeds the limit of {MAX_ENUMERATED_ENTRIES}",
            free.len()
        )));
    }
    let mut mask = Array2::zeros((d, d));
    for bits in 0u64..(1u64 << free.len()) {
        let mut log_q = 0.0;
        for (k, &(i, j)) in free.iter().enumerate() {
            let on = bits >> k & 1 == 1;
            mask[[i, j]] = if on { 1.0 } else { 0.0 };
            let a = logits[[i, j]];
            log_q += if on { -softplus(-a) } else { -softplus(a) };
        }
        visit(&mask, log_q)?;
    }
    Ok(())
}

/// ELBO for one state with the expectation computed by enumerating every
/// mask. Intended for `d <= 4`.
pub fn elbo_exact(
    target: &Target,
    net: &VariationalNet,
    phi: &[f64],
    p: &NodePotentials,
    theta: &[f64],
    batch: ArrayView2<f64>,
    n_total: usize,
) -> Result<f64> {
    net.check(phi)?;
    target.check_state(p, theta)?;
    let logits = net.logits(phi, p);
    elbo_exact_for_logits(target, logits.view(), p, theta, batch, n_total)
}

pub(crate) fn elbo_exact_for_logits(
    target: &Target,
    logits: ArrayView2<f64>,
    p: &NodePotentials,
    theta: &[f64],
    batch: ArrayView2<f64>,
    n_total: usize,
) -> Result<f64> {
    let orient = hard_orientation(p)?;
    let scale = minibatch_scale(n_total, batch.nrows());
    let mut expect = 0.0;
    enumerate_masks(logits, |mask, log_q| {
        let g = mask * &orient;
        expect += log_q.exp() * conditional_log_joint(target, p, theta, g.view(), batch, scale)?;
        Ok(())
    })?;
    let (kl, _) = kl_to_edge_prior(logits);
    Ok(expect - kl)
}

/// `log sum_W p(W) p(D, p, Theta | W)` by enumeration, with `p(W)` the
/// entrywise Bernoulli edge prior.
pub fn exact_log_evidence(
    target: &Target,
    p: &NodePotentials,
    theta: &[f64],
    batch: ArrayView2<f64>,
    n_total: usize,
) -> Result<f64> {
    target.check_state(p, theta)?;
    let d = target.d();
    let orient = hard_orientation(p)?;
    let scale = minibatch_scale(n_total, batch.nrows());
    let prior_logits = Array2::from_elem((d, d), EDGE_PRIOR_LOGIT);
    let mut terms = Vec::new();
    enumerate_masks(prior_logits.view(), |mask, log_prior| {
        let g = mask * &orient;
        terms.push(log_prior + conditional_log_joint(target, p, theta, g.view(), batch, scale)?);
        Ok(())
    })?;
    debug_assert!((edge_prior_probability() - sigmoid(EDGE_PRIOR_LOGIT)).abs() < 1e-15);
    Ok(log_sum_exp(&terms))
}

/// Adam ascent on a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Array1<f64>,
    v: Array1<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Array1::zeros(n),
            v: Array1::zeros(n),
            t: 0,
        }
    }

    /// `params += lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            params[k] += self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}
