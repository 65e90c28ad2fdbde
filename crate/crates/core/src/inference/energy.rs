use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nocurl::{ForwardMode, NodePotentials, Orientation, RelaxationConstants};
use crate::scm::ScmModel;

use super::prior::{log_prior_p, log_prior_theta, PriorConfig};

/// Everything the energy needs besides the current state and data.
#[derive(Clone, Debug)]
pub struct Target {
    pub model: ScmModel,
    pub prior: PriorConfig,
    pub consts: RelaxationConstants,
}

impl Target {
    pub fn d(&self) -> usize {
        self.model.d()
    }

    /// Checks that `theta` and the potentials have the model's shapes.
    pub(crate) fn check_state(&self, p: &NodePotentials, theta: &[f64]) -> Result<()> {
        if p.d() != self.d() || theta.len() != self.model.num_params() {
            return Err(Error::Dimension(format!(
                "state has d={} and {} parameters, model expects d={} and {}",
                p.d(),
                theta.len(),
                self.d(),
                self.model.num_params()
            )));
        }
        Ok(())
    }
}

/// Energy and gradients at one state.
#[derive(Clone, Debug)]
pub struct EnergyGrad {
    /// `-scaled loglik - log p(p) - log p(Theta) + lambda_s * sum(G)` with
    /// `G` from the forward orientation.
    pub energy: f64,
    pub grad_p: Array1<f64>,
    pub grad_theta: Array1<f64>,
    /// Gradient with respect to the (relaxed) mask entries.
    pub grad_w: Array2<f64>,
    pub sinkhorn_converged: bool,
}

/// `|D| / |batch|`, zero for an empty batch.
pub fn minibatch_scale(n_total: usize, batch_rows: usize) -> f64 {
    if batch_rows == 0 {
        0.0
    } else {
        n_total as f64 / batch_rows as f64
    }
}

/// Row indices of a minibatch drawn without replacement.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    index::sample(rng, n, size).into_vec()
}

/// Scaled log-likelihood and its mask and parameter gradients for `G`.
pub(crate) fn scaled_likelihood(
    model: &ScmModel,
    batch: ArrayView2<f64>,
    scale: f64,
    g: ArrayView2<f64>,
    theta: &[f64],
    want_theta: bool,
) -> Result<(f64, Array2<f64>, Option<Array1<f64>>)> {
    let d = model.d();
    if batch.nrows() == 0 {
        let grad_theta = want_theta.then(|| Array1::zeros(model.num_params()));
        return Ok((0.0, Array2::zeros((d, d)), grad_theta));
    }
    let lg = model.gradient(batch, g, theta, want_theta)?;
    Ok((
        scale * lg.log_lik,
        lg.mask * scale,
        lg.theta.map(|t| t * scale),
    ))
}

/// Energy gradient for a fixed mask `w`.
///
/// `w` is usually binary; in [`ForwardMode::Soft`] it may carry relaxed
/// values and the returned gradient is exact for the surrogate energy in
/// which `G = w ⊙ S L Sᵀ`. In [`ForwardMode::Hard`] the forward pass uses
/// the hard orientation and the `p` gradient is straight-through. `n_total`
/// scales the minibatch likelihood.
pub fn grad_u(
    target: &Target,
    p: &NodePotentials,
    theta: ArrayView1<f64>,
    w: ArrayView2<f64>,
    batch: ArrayView2<f64>,
    n_total: usize,
    mode: ForwardMode,
) -> Result<EnergyGrad> {
    let d = target.d();
    let theta = theta
        .as_slice()
        .ok_or_else(|| Error::Dimension("theta must be contiguous".into()))?;
    target.check_state(p, theta)?;
    if w.dim() != (d, d) {
        return Err(Error::Dimension(format!(
            "mask is {:?}, expected {d}x{d}",
            w.dim()
        )));
    }
    let orient = Orientation::new(p, &target.consts, mode)?;
    let mut g = &w * &orient.forward;
    for i in 0..d {
        g[[i, i]] = 0.0;
    }
    let scale = minibatch_scale(n_total, batch.nrows());
    let (ll, mask_grad, theta_grad) =
        scaled_likelihood(&target.model, batch, scale, g.view(), theta, true)?;
    let lambda = target.prior.lambda_s;
    let alpha = target.prior.alpha;
    let theta_view = ArrayView1::from(theta);

    // dU/dG, then split over the two factors of G = w ⊙ A.
    let mut grad_g = mask_grad.mapv(|v| lambda - v);
    for i in 0..d {
        grad_g[[i, i]] = 0.0;
    }
    let grad_a = &grad_g * &w;
    let grad_w = &grad_g * &orient.forward;
    let grad_p = p.as_array() / alpha + orient.backward(grad_a.view());
    let grad_theta = &theta_view - &theta_grad.expect("requested");
    let energy =
        -ll - log_prior_p(p.view(), alpha) - log_prior_theta(theta_view) + lambda * g.sum();
    Ok(EnergyGrad {
        energy,
        grad_p,
        grad_theta,
        grad_w,
        sinkhorn_converged: orient.relaxed.soft.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{ModelKind, NetworkArchitecture};
    use ndarray::s;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn target(model: ScmModel, lambda_s: f64, temperature: f64, iters: usize, tol: f64) -> Target {
        let d = model.d();
        Target {
            model,
            prior: PriorConfig {
                alpha: 0.7,
                lambda_s,
            },
            consts: RelaxationConstants {
                d,
                temperature,
                max_iters: iters,
                tol,
            },
        }
    }

    fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.sample(StandardNormal))
    }

    fn random_p(rng: &mut ChaCha8Rng, d: usize) -> NodePotentials {
        NodePotentials::new(Array1::from_shape_fn(d, |_| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    #[test]
    fn prior_only_gradient_on_empty_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ModelKind::Linear, ModelKind::Mlp] {
            let model = ScmModel::new(4, kind);
            let t = target(model, 0.0, 0.2, 3000, 1e-3);
            let p = random_p(&mut rng, 4);
            let theta = t.model.init_params(&mut rng);
            let w = Array2::from_shape_fn((4, 4), |(i, j)| if i != j { 1.0 } else { 0.0 });
            let empty = Array2::<f64>::zeros((0, 4));
            let e = grad_u(
                &t,
                &p,
                theta.view(),
                w.view(),
                empty.view(),
                100,
                ForwardMode::Hard,
            )
            .unwrap();
            let expected_p = p.as_array() / 0.7;
            for (a, b) in e.grad_p.iter().zip(expected_p.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(e.grad_theta, theta);
        }
    }

    /// The gradient is exact for the soft surrogate, so we compare with
    /// central differences at a fixed Sinkhorn iteration count.
    #[test]
    fn soft_surrogate_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 4;
        let arch = NetworkArchitecture {
            hidden_size: 8,
            hidden_layers: 1,
            embedding_dim: 5,
            layer_norm: true,
            residual: true,
        };
        for trial in 0..50 {
            let model = if trial % 2 == 0 {
                ScmModel::linear(d)
            } else {
                ScmModel::nonlinear(d, arch)
            };
            let t = target(model, 1.3, 1.0, 20, 1e-300);
            let x = normal(&mut rng, (12, d));
            let p = random_p(&mut rng, d);
            let theta = t.model.init_params(&mut rng)
                + 0.3
                    * Array1::from_shape_fn(t.model.num_params(), |_| {
                        rng.sample::<f64, _>(StandardNormal)
                    });
            let w = Array2::from_shape_fn((d, d), |(i, j)| {
                if i != j {
                    rng.random_range(0.1..1.0)
                } else {
                    0.0
                }
            });
            let n_total = 30;
            let e = grad_u(
                &t,
                &p,
                theta.view(),
                w.view(),
                x.view(),
                n_total,
                ForwardMode::Soft,
            )
            .unwrap();
            let energy = |p: &Array1<f64>, th: &Array1<f64>, w: &Array2<f64>| {
                grad_u(
                    &t,
                    &NodePotentials::new(p.clone()).unwrap(),
                    th.view(),
                    w.view(),
                    x.view(),
                    n_total,
                    ForwardMode::Soft,
                )
                .unwrap()
                .energy
            };
            let h = 1e-6;
            let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
            for k in 0..d {
                let mut up = p.as_array().clone();
                up[k] += h;
                let mut dn = p.as_array().clone();
                dn[k] -= h;
                let fd = (energy(&up, &theta, &w) - energy(&dn, &theta, &w)) / (2.0 * h);
                assert!(
                    rel(fd, e.grad_p[k]) < 1e-4,
                    "trial {trial} p[{k}]: fd {fd} vs {}",
                    e.grad_p[k]
                );
            }
            // Parameters: directional derivative along a random direction.
            let dir = Array1::from_shape_fn(theta.len(), |_| rng.sample::<f64, _>(StandardNormal));
            let fd = (energy(p.as_array(), &(&theta + &(&dir * h)), &w)
                - energy(p.as_array(), &(&theta - &(&dir * h)), &w))
                / (2.0 * h);
            let an = e.grad_theta.dot(&dir);
            assert!(rel(fd, an) < 1e-4, "trial {trial} theta: fd {fd} vs {an}");
            for (i, j) in [(0, 1), (2, 1), (3, 0)] {
                let mut up = w.clone();
                up[[i, j]] += h;
                let mut dn = w.clone();
                dn[[i, j]] -= h;
                let fd = (energy(p.as_array(), &theta, &up) - energy(p.as_array(), &theta, &dn))
                    / (2.0 * h);
                assert!(
                    rel(fd, e.grad_w[[i, j]]) < 1e-4,
                    "trial {trial} w: fd {fd} vs {}",
                    e.grad_w[[i, j]]
                );
            }
        }
    }

    #[test]
    fn half_batches_are_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let d = 3;
        let t = target(ScmModel::linear(d), 2.0, 1.0, 50, 1e-9);
        let x = normal(&mut rng, (40, d));
        let p = random_p(&mut rng, d);
        let theta = t.model.init_params(&mut rng);
        let w = Array2::from_shape_fn((d, d), |(i, j)| if i != j { 1.0 } else { 0.0 });
        let full = grad_u(
            &t,
            &p,
            theta.view(),
            w.view(),
            x.view(),
            40,
            ForwardMode::Hard,
        )
        .unwrap();
        let dir_p = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        let dir_t = Array1::from_shape_fn(theta.len(), |_| rng.sample::<f64, _>(StandardNormal));
        let reps = 1000;
        let mut stats = [(0.0, 0.0), (0.0, 0.0)];
        for _ in 0..reps {
            let idx = sample_batch(40, 20, &mut rng);
            let b = x.select(ndarray::Axis(0), &idx);
            let e = grad_u(
                &t,
                &p,
                theta.view(),
                w.view(),
                b.view(),
                40,
                ForwardMode::Hard,
            )
            .unwrap();
            for (s, v) in stats
                .iter_mut()
                .zip([e.grad_p.dot(&dir_p), e.grad_theta.dot(&dir_t)])
            {
                s.0 += v;
                s.1 += v * v;
            }
        }
        for (s, target_value) in stats
            .iter()
            .zip([full.grad_p.dot(&dir_p), full.grad_theta.dot(&dir_t)])
        {
            let mean = s.0 / reps as f64;
            let se = ((s.1 / reps as f64 - mean * mean) / reps as f64).sqrt();
            assert!(
                (mean - target_value).abs() < 2.0 * se,
                "mean {mean} vs {target_value} (se {se})"
            );
        }
    }

    #[test]
    fn hard_energy_counts_hard_edges() {
        let d = 3;
        let t = target(ScmModel::linear(d), 5.0, 0.2, 3000, 1e-3);
        let p = NodePotentials::from_vec(vec![1.0, 0.0, -1.0]).unwrap();
        let theta = Array1::zeros(t.model.num_params());
        let w = Array2::from_shape_fn((d, d), |(i, j)| if i != j { 1.0 } else { 0.0 });
        let empty = Array2::<f64>::zeros((0, d));
        let e = grad_u(
            &t,
            &p,
            theta.view(),
            w.view(),
            empty.view(),
            0,
            ForwardMode::Hard,
        )
        .unwrap();
        let base = -log_prior_p(p.view(), 0.7) - log_prior_theta(theta.view());
        assert!((e.energy - base - 15.0).abs() < 1e-12);
        assert!(e
            .grad_w
            .slice(s![0, 1..])
            .iter()
            .all(|&v| (v - 5.0).abs() < 1e-12));
        assert!(e.sinkhorn_converged);
    }
}
