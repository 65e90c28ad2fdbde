use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian_log_density;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, MlpSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "mlp" | "nonlinear" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Shape of the shared `l` and `zeta` networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub embedding_dim: usize,
    pub layer_norm: bool,
    pub residual: bool,
}

impl NetworkArchitecture {
    /// Width `max(4d, 64)`, one hidden layer, embeddings as wide as the
    /// hidden layer.
    pub fn for_dim(d: usize) -> Self {
        let h = (4 * d).max(64);
        NetworkArchitecture {
            hidden_size: h,
            hidden_layers: 1,
            embedding_dim: h,
            layer_norm: true,
            residual: true,
        }
    }
}

/// Log-likelihood with its gradients.
#[derive(Clone, Debug)]
pub struct ScmGradient {
    pub log_lik: f64,
    /// Gradient with respect to the flat parameter vector, when requested.
    pub theta: Option<Array1<f64>>,
    /// `mask[(j, i)]`: derivative with respect to the soft edge weight `j -> i`.
    pub mask: Array2<f64>,
}

#[derive(Clone, Debug)]
enum Inner {
    /// `theta = [B (d*d, row j = source), log sigma^2 (d)]`, mean
    /// `f_i = sum_j G_ji B_ji x_j`.
    Linear,
    /// `f_i = zeta(u_i, sum_j G_ji l(u_j, x_j))`.
    Nonlinear {
        arch: NetworkArchitecture,
        l_net: Mlp,
        zeta_net: Mlp,
        emb: usize,
    },
}

/// Inference-time mechanism family over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct ScmModel {
    d: usize,
    inner: Inner,
    log_var: usize,
    len: usize,
}

struct Forward {
    means: Array2<f64>,
    nonlinear: Option<NonlinearForward>,
}

struct NonlinearForward {
    l_out: Array2<f64>,
    l_cache: MlpCache,
    agg: Array2<f64>,
    z_cache: MlpCache,
}

impl ScmModel {
    pub fn linear(d: usize) -> Self {
        ScmModel {
            d,
            inner: Inner::Linear,
            log_var: d * d,
            len: d * d + d,
        }
    }

    pub fn nonlinear(d: usize, arch: NetworkArchitecture) -> Self {
        let e = arch.embedding_dim;
        let emb = 0;
        let l_spec = MlpSpec {
            input: 1 + e,
            hidden: arch.hidden_size,
            hidden_layers: arch.hidden_layers,
            output: e,
            input_norm: false,
            layer_norm: arch.layer_norm,
            residual: arch.residual,
        };
        let l_net = Mlp::new(l_spec, emb + d * e);
        let z_spec = MlpSpec {
            input: 2 * e,
            output: 1,
            ..l_spec
        };
        let zeta_net = Mlp::new(z_spec, l_net.end());
        let log_var = zeta_net.end();
        ScmModel {
            d,
            inner: Inner::Nonlinear {
                arch,
                l_net,
                zeta_net,
                emb,
            },
            log_var,
            len: log_var + d,
        }
    }

    pub fn new(d: usize, kind: ModelKind) -> Self {
        match kind {
            ModelKind::Linear => Self::linear(d),
            ModelKind::Mlp => Self::nonlinear(d, NetworkArchitecture::for_dim(d)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.inner {
            Inner::Linear => ModelKind::Linear,
            Inner::Nonlinear { .. } => ModelKind::Mlp,
        }
    }

    pub fn architecture(&self) -> Option<NetworkArchitecture> {
        match &self.inner {
            Inner::Linear => None,
            Inner::Nonlinear { arch, .. } => Some(*arch),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    /// Index range of the per-node log noise variances.
    pub fn log_var_range(&self) -> Range<usize> {
        self.log_var..self.log_var + self.d
    }

    /// Network weights uniform in `±1/sqrt(fan_in)`, embeddings
    /// `N(0, 1/E)`, linear coefficients `N(0, 0.01)`, log-variances zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let mut theta = vec![0.0; self.len];
        match &self.inner {
            Inner::Linear => {
                for v in &mut theta[..self.d * self.d] {
                    *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Inner::Nonlinear {
                arch,
                l_net,
                zeta_net,
                emb,
            } => {
                let scale = 1.0 / (arch.embedding_dim as f64).sqrt();
                for v in &mut theta[*emb..*emb + self.d * arch.embedding_dim] {
                    *v = scale * rng.sample::<f64, _>(StandardNormal);
                }
                l_net.init(&mut theta, rng);
                zeta_net.init(&mut theta, rng);
            }
        }
        Array1::from(theta)
    }

    fn check(&self, x: ArrayView2<f64>, g: ArrayView2<f64>, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        if x.ncols() != d || g.dim() != (d, d) || theta.len() != self.len {
            return Err(Error::Dimension(format!(
                "model d={d} with {} parameters got data {:?}, mask {:?}, theta {}",
                self.len,
                x.dim(),
                g.dim(),
                theta.len()
            )));
        }
        let var: Vec<f64> = theta[self.log_var_range()]
            .iter()
            .map(|v| v.exp())
            .collect();
        if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numeric(format!(
                "noise variances must be positive and finite, got {var:?}"
            )));
        }
        Ok(var)
    }

    /// `means[(n, i)] = f_i(x_n)` under the (possibly soft) mask `g`.
    pub fn predict_means(
        &self,
        x: ArrayView2<f64>,
        g: ArrayView2<f64>,
        theta: &[f64],
    ) -> Result<Array2<f64>> {
        self.check(x, g, theta)?;
        Ok(self.forward(x, g, theta).means)
    }

    pub fn log_likelihood(
        &self,
        x: ArrayView2<f64>,
        g: ArrayView2<f64>,
        theta: &[f64],
    ) -> Result<f64> {
        let var = self.check(x, g, theta)?;
        let means = self.forward(x, g, theta).means;
        Ok(log_lik(x, means.view(), &var))
    }

    /// Per-row log-likelihoods, summed over nodes.
    pub fn row_log_likelihoods(
        &self,
        x: ArrayView2<f64>,
        g: ArrayView2<f64>,
        theta: &[f64],
    ) -> Result<Array1<f64>> {
        let var = self.check(x, g, theta)?;
        let means = self.forward(x, g, theta).means;
        Ok(Array1::from_iter(
            x.rows().into_iter().zip(means.rows()).map(|(xr, mr)| {
                xr.iter()
                    .zip(mr.iter())
                    .zip(&var)
                    .map(|((a, b), v)| gaussian_log_density(a - b, *v))
                    .sum::<f64>()
            }),
        ))
    }

    /// Log-likelihood, its gradient with respect to the mask and, when
    /// `want_theta`, with respect to the parameters.
    pub fn gradient(
        &self,
        x: ArrayView2<f64>,
        g: ArrayView2<f64>,
        theta: &[f64],
        want_theta: bool,
    ) -> Result<ScmGradient> {
        let var = self.check(x, g, theta)?;
        let d = self.d;
        let n = x.nrows();
        let fwd = self.forward(x, g, theta);
        let ll = log_lik(x, fwd.means.view(), &var);
        // d loglik / d f_ni = r_ni / sigma_i^2.
        let mut d_f = &x - &fwd.means;
        let mut grad_theta = if want_theta {
            Some(vec![0.0; self.len])
        } else {
            None
        };
        if let Some(gt) = grad_theta.as_mut() {
            for i in 0..d {
                let sq: f64 = d_f.column(i).iter().map(|r| r * r).sum();
                gt[self.log_var + i] = -0.5 * n as f64 + 0.5 * sq / var[i];
            }
        }
        for mut row in d_f.rows_mut() {
            for (v, s2) in row.iter_mut().zip(&var) {
                *v /= s2;
            }
        }

        let mask = match &self.inner {
            Inner::Linear => {
                let b = ArrayView2::from_shape((d, d), &theta[..d * d]).expect("layout");
                let grad_gb = x.t().dot(&d_f);
                if let Some(gt) = grad_theta.as_mut() {
                    let mut gb =
                        ArrayViewMut2::from_shape((d, d), &mut gt[..d * d]).expect("layout");
                    gb.assign(&(&grad_gb * &g));
                }
                &grad_gb * &b
            }
            Inner::Nonlinear {
                arch,
                l_net,
                zeta_net,
                emb,
            } => {
                let nf = fwd.nonlinear.expect("nonlinear forward");
                let e = arch.embedding_dim;
                let u = ArrayView2::from_shape((d, e), &theta[*emb..*emb + d * e]).expect("layout");
                let d_out = d_f.into_shape_with_order((n * d, 1)).expect("contiguous");
                let (d_pre_z, _) = zeta_net.backward_to_first(
                    theta,
                    &nf.z_cache,
                    d_out,
                    grad_theta.as_deref_mut(),
                );
                let z0 = zeta_net.first_weight(theta);
                let z0_agg = z0.slice(s![.., ..e]);
                let z0_emb = z0.slice(s![.., e..]);
                if let Some(gt) = grad_theta.as_mut() {
                    let per_node = sum_per_node(d_pre_z.view(), d);
                    {
                        let (mut gw, mut gb) = zeta_net.first_grads(gt);
                        gw.slice_mut(s![.., ..e])
                            .scaled_add(1.0, &d_pre_z.t().dot(&nf.agg));
                        gw.slice_mut(s![.., e..])
                            .scaled_add(1.0, &per_node.t().dot(&u));
                        gb.scaled_add(1.0, &per_node.sum_axis(Axis(0)));
                    }
                    let mut gu = ArrayViewMut2::from_shape((d, e), &mut gt[*emb..*emb + d * e])
                        .expect("layout");
                    gu.scaled_add(1.0, &per_node.dot(&z0_emb));
                }
                let d_agg = d_pre_z.dot(&z0_agg);
                let mut grad_g = Array2::zeros((d, d));
                let mut d_l = if want_theta {
                    Some(Array2::zeros((n * d, e)))
                } else {
                    None
                };
                for row in 0..n {
                    let rows = row * d..(row + 1) * d;
                    let l_n = nf.l_out.slice(s![rows.clone(), ..]);
                    let da_n = d_agg.slice(s![rows.clone(), ..]);
                    grad_g += &l_n.dot(&da_n.t());
                    if let Some(dl) = d_l.as_mut() {
                        dl.slice_mut(s![rows, ..]).assign(&g.dot(&da_n));
                    }
                }
                if let (Some(gt), Some(dl)) = (grad_theta.as_mut(), d_l) {
                    let (d_pre_l, _) =
                        l_net.backward_to_first(theta, &nf.l_cache, dl, Some(gt.as_mut_slice()));
                    let w0 = l_net.first_weight(theta);
                    let w0_emb = w0.slice(s![.., 1..]);
                    let per_node = sum_per_node(d_pre_l.view(), d);
                    let x_flat = Array1::from_iter(x.iter().copied());
                    {
                        let (mut gw, mut gb) = l_net.first_grads(gt);
                        gw.column_mut(0).scaled_add(1.0, &d_pre_l.t().dot(&x_flat));
                        gw.slice_mut(s![.., 1..])
                            .scaled_add(1.0, &per_node.t().dot(&u));
                        gb.scaled_add(1.0, &per_node.sum_axis(Axis(0)));
                    }
                    let mut gu = ArrayViewMut2::from_shape((d, e), &mut gt[*emb..*emb + d * e])
                        .expect("layout");
                    gu.scaled_add(1.0, &per_node.dot(&w0_emb));
                }
                grad_g
            }
        };
        Ok(ScmGradient {
            log_lik: ll,
            theta: grad_theta.map(Array1::from),
            mask,
        })
    }

    fn forward(&self, x: ArrayView2<f64>, g: ArrayView2<f64>, theta: &[f64]) -> Forward {
        let d = self.d;
        let n = x.nrows();
        match &self.inner {
            Inner::Linear => {
                let b = ArrayView2::from_shape((d, d), &theta[..d * d]).expect("layout");
                Forward {
                    means: x.dot(&(&g * &b)),
                    nonlinear: None,
                }
            }
            Inner::Nonlinear {
                arch,
                l_net,
                zeta_net,
                emb,
            } => {
                let e = arch.embedding_dim;
                let h = arch.hidden_size;
                let u = ArrayView2::from_shape((d, e), &theta[*emb..*emb + d * e]).expect("layout");
                // l first layer: rows (n, j) get x_nj * w0[:, 0] + (W0[:, 1..] u_j + b0).
                let w0 = l_net.first_weight(theta);
                let node_part = u.dot(&w0.slice(s![.., 1..]).t()) + l_net.first_bias(theta);
                let w_x = w0.column(0);
                let mut pre = Array2::zeros((n * d, h));
                for (r, mut row) in pre.rows_mut().into_iter().enumerate() {
                    let (i, j) = (r / d, r % d);
                    let xv = x[[i, j]];
                    row.assign(&node_part.row(j));
                    row.scaled_add(xv, &w_x);
                }
                let (l_out, l_cache) = l_net.forward_from_first(theta, pre);
                let mut agg = Array2::zeros((n * d, e));
                for row in 0..n {
                    let rows = row * d..(row + 1) * d;
                    let prod = g.t().dot(&l_out.slice(s![rows.clone(), ..]));
                    agg.slice_mut(s![rows, ..]).assign(&prod);
                }
                let z0 = zeta_net.first_weight(theta);
                let z_node = u.dot(&z0.slice(s![.., e..]).t()) + zeta_net.first_bias(theta);
                let mut z_pre = agg.dot(&z0.slice(s![.., ..e]).t());
                for (r, mut row) in z_pre.rows_mut().into_iter().enumerate() {
                    row += &z_node.row(r % d);
                }
                let (f, z_cache) = zeta_net.forward_from_first(theta, z_pre);
                let means = f.into_shape_with_order((n, d)).expect("contiguous");
                Forward {
                    means,
                    nonlinear: Some(NonlinearForward {
                        l_out,
                        l_cache,
                        agg,
                        z_cache,
                    }),
                }
            }
        }
    }
}

/// Sums rows `(n, i)` of an `(N d) x k` matrix over `n`, giving `d x k`.
fn sum_per_node(m: ArrayView2<f64>, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((d, m.ncols()));
    for (r, row) in m.rows().into_iter().enumerate() {
        let mut o = out.row_mut(r % d);
        o += &row;
    }
    out
}

fn log_lik(x: ArrayView2<f64>, means: ArrayView2<f64>, var: &[f64]) -> f64 {
    let mut total = 0.0;
    for (xr, mr) in x.rows().into_iter().zip(means.rows()) {
        for ((a, b), v) in xr.iter().zip(mr.iter()).zip(var) {
            total += gaussian_log_density(a - b, *v);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::DagAdjacency;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> NetworkArchitecture {
        NetworkArchitecture {
            hidden_size: 6,
            hidden_layers: 1,
            embedding_dim: 6,
            layer_norm: true,
            residual: true,
        }
    }

    fn random_x(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-8)
    }

    #[test]
    fn default_architecture_width() {
        assert_eq!(NetworkArchitecture::for_dim(5).hidden_size, 64);
        assert_eq!(NetworkArchitecture::for_dim(30).hidden_size, 120);
        assert_eq!(NetworkArchitecture::for_dim(30).embedding_dim, 120);
    }

    #[test]
    fn empty_graph_output_is_constant_and_matches_zero_soft_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ScmModel::nonlinear(3, small_arch());
        let theta = model.init_params(&mut rng);
        let x = random_x(&mut rng, 7, 3);
        let zero = Array2::zeros((3, 3));
        let m = model
            .predict_means(x.view(), zero.view(), theta.as_slice().unwrap())
            .unwrap();
        for i in 0..3 {
            assert!(m.column(i).iter().all(|&v| (v - m[[0, i]]).abs() < 1e-14));
        }
        let other = random_x(&mut rng, 7, 3);
        let m2 = model
            .predict_means(other.view(), zero.view(), theta.as_slice().unwrap())
            .unwrap();
        assert!((&m - &m2).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn hand_computed_chain_forward() {
        // Width-1 networks without normalization or skips.
        let arch = NetworkArchitecture {
            hidden_size: 1,
            hidden_layers: 1,
            embedding_dim: 1,
            layer_norm: false,
            residual: false,
        };
        let model = ScmModel::nonlinear(2, arch);
        // Layout: u (2), l: W0 (1x2), b0, W1 (1x1), b1, zeta: W0 (1x2), b0, W1, b1, log var (2).
        let theta = vec![
            0.3, -0.2, // u
            0.5, 0.1, 0.05, 2.0, -0.1, // l
            0.7, -0.4, 0.2, 1.5, 0.25, // zeta
            0.0, 0.0,
        ];
        assert_eq!(model.num_params(), theta.len());
        let lrelu = |v: f64| if v > 0.0 { v } else { 0.01 * v };
        let l = |x: f64, u: f64| 2.0 * lrelu(0.5 * x + 0.1 * u + 0.05) - 0.1;
        let zeta = |a: f64, u: f64| 1.5 * lrelu(0.7 * a - 0.4 * u + 0.2) + 0.25;
        let x = array![[0.8, -1.3], [-2.0, 0.4]];
        let g = array![[0.0, 1.0], [0.0, 0.0]];
        let m = model.predict_means(x.view(), g.view(), &theta).unwrap();
        for n in 0..2 {
            let f0 = zeta(0.0, 0.3);
            let f1 = zeta(l(x[[n, 0]], 0.3), -0.2);
            assert!((m[[n, 0]] - f0).abs() < 1e-12);
            assert!((m[[n, 1]] - f1).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_closed_forms() {
        let model = ScmModel::linear(1);
        let ll = model
            .log_likelihood(array![[0.0]].view(), array![[0.0]].view(), &[0.0, 0.0])
            .unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);

        let zero_net = ScmModel::nonlinear(1, small_arch());
        let theta = vec![0.0; zero_net.num_params()];
        let ll = zero_net
            .log_likelihood(array![[0.0]].view(), array![[0.0]].view(), &theta)
            .unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);

        let chain = ScmModel::linear(2);
        let a = 1.7;
        let theta = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let g = array![[0.0, 1.0], [0.0, 0.0]];
        let ll = chain
            .log_likelihood(array![[a, a]].view(), g.view(), &theta)
            .unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - a * a / 2.0;
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_and_variance_errors() {
        let model = ScmModel::linear(2);
        let g = Array2::zeros((2, 2));
        assert!(matches!(
            model.log_likelihood(Array2::zeros((3, 3)).view(), g.view(), &[0.0; 6]),
            Err(Error::Dimension(_))
        ));
        assert!(model
            .log_likelihood(Array2::zeros((3, 2)).view(), g.view(), &[0.0; 5])
            .is_err());
        let bad = [0.0, 0.0, 0.0, 0.0, -1e4, 0.0];
        assert!(matches!(
            model.log_likelihood(Array2::zeros((3, 2)).view(), g.view(), &bad),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn perfect_fit_log_variance_gradient_is_minus_half() {
        let model = ScmModel::linear(2);
        let theta = [0.0, 2.0, 0.0, 0.0, 0.3, -0.2];
        let g = array![[0.0, 1.0], [0.0, 0.0]];
        // x_1 = 2 x_0 exactly, x_0 = 0 so both residuals vanish.
        let x = array![[0.0, 0.0]];
        let grad = model.gradient(x.view(), g.view(), &theta, true).unwrap();
        let gt = grad.theta.unwrap();
        assert!((gt[4] + 0.5).abs() < 1e-15 && (gt[5] + 0.5).abs() < 1e-15);
    }

    fn finite_difference_check(model: &ScmModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = model.d();
        let x = random_x(&mut rng, 6, d);
        let g = Array2::from_shape_fn((d, d), |(i, j)| {
            if i == j {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        let mut theta = model.init_params(&mut rng);
        for v in theta.slice_mut(s![model.log_var_range()]).iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let theta = theta.to_vec();
        let grad = model.gradient(x.view(), g.view(), &theta, true).unwrap();
        let h = 1e-5;
        let fd_theta: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                (model.log_likelihood(x.view(), g.view(), &up).unwrap()
                    - model.log_likelihood(x.view(), g.view(), &dn).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let analytic = grad.theta.unwrap();
        let lv = model.log_var_range();
        assert!(
            rel_err(
                &analytic.as_slice().unwrap()[..lv.start],
                &fd_theta[..lv.start]
            ) < 1e-4
        );
        assert!(rel_err(&analytic.as_slice().unwrap()[lv.clone()], &fd_theta[lv]) < 1e-4);
        let fd_mask = Array2::from_shape_fn((d, d), |(i, j)| {
            let mut up = g.clone();
            up[[i, j]] += h;
            let mut dn = g.clone();
            dn[[i, j]] -= h;
            (model.log_likelihood(x.view(), up.view(), &theta).unwrap()
                - model.log_likelihood(x.view(), dn.view(), &theta).unwrap())
                / (2.0 * h)
        });
        assert!(rel_err(grad.mask.as_slice().unwrap(), fd_mask.as_slice().unwrap()) < 1e-4);
        let mask_only = model.gradient(x.view(), g.view(), &theta, false).unwrap();
        assert!(mask_only.theta.is_none());
        assert_eq!(mask_only.mask, grad.mask);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..100 {
            finite_difference_check(&ScmModel::nonlinear(4, small_arch()), seed);
        }
        let wide = NetworkArchitecture {
            hidden_size: 8,
            hidden_layers: 2,
            embedding_dim: 5,
            layer_norm: true,
            residual: true,
        };
        finite_difference_check(&ScmModel::nonlinear(3, wide), 7);
        for seed in 0..20 {
            finite_difference_check(&ScmModel::linear(4), seed);
        }
    }

    #[test]
    fn mask_gradient_vanishes_when_parent_message_is_zero() {
        let model = ScmModel::nonlinear(2, small_arch());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut theta = model.init_params(&mut rng).to_vec();
        // Zero every l parameter so l_j(x_j) = 0 on all rows.
        let Inner::Nonlinear { l_net, .. } = &model.inner else {
            unreachable!()
        };
        for v in &mut theta[l_net.end() - l_net.num_params()..l_net.end()] {
            *v = 0.0;
        }
        let x = random_x(&mut rng, 5, 2);
        let g = array![[0.0, 0.6], [0.3, 0.0]];
        let grad = model.gradient(x.view(), g.view(), &theta, false).unwrap();
        assert!(grad.mask.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn factorizes_over_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = ScmModel::nonlinear(4, small_arch());
        let theta = model.init_params(&mut rng).to_vec();
        let g = DagAdjacency::from_edges(4, &[(0, 1), (1, 2), (0, 3), (2, 3)])
            .unwrap()
            .to_f64();
        let x = random_x(&mut rng, 9, 4);
        let total = model.log_likelihood(x.view(), g.view(), &theta).unwrap();
        // Naive per-node evaluation: node i's mean only sees its parents, so
        // scramble every non-parent column and recompute one node at a time.
        let var: Vec<f64> = theta[model.log_var_range()]
            .iter()
            .map(|v| v.exp())
            .collect();
        let mut naive = 0.0;
        for i in 0..4 {
            let mut xs = x.clone();
            for j in 0..4 {
                if g[[j, i]] == 0.0 {
                    xs.column_mut(j).mapv_inplace(|v| v * 3.0 + 11.0);
                }
            }
            let m = model.predict_means(xs.view(), g.view(), &theta).unwrap();
            for n in 0..9 {
                naive += gaussian_log_density(x[[n, i]] - m[[n, i]], var[i]);
            }
        }
        assert!((total - naive).abs() < 1e-10);
        let rows = model
            .row_log_likelihoods(x.view(), g.view(), &theta)
            .unwrap();
        assert!((rows.sum() - total).abs() < 1e-10);
    }

    #[test]
    fn relabeling_leaves_likelihood_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let perm = [2usize, 0, 3, 1];
        let dag = DagAdjacency::from_edges(d, &[(0, 1), (1, 2), (0, 3)]).unwrap();
        let x = random_x(&mut rng, 8, d);
        let mut xp = Array2::zeros((8, d));
        for i in 0..d {
            xp.column_mut(perm[i]).assign(&x.column(i));
        }
        let gp = dag.relabel(&perm).to_f64();

        let lin = ScmModel::linear(d);
        let theta = lin.init_params(&mut rng).to_vec();
        let mut tp = vec![0.0; theta.len()];
        for i in 0..d {
            for j in 0..d {
                tp[perm[i] * d + perm[j]] = theta[i * d + j];
            }
            tp[d * d + perm[i]] = theta[d * d + i];
        }
        let a = lin
            .log_likelihood(x.view(), dag.to_f64().view(), &theta)
            .unwrap();
        let b = lin.log_likelihood(xp.view(), gp.view(), &tp).unwrap();
        assert!((a - b).abs() < 1e-10);

        let net = ScmModel::nonlinear(d, small_arch());
        let theta = net.init_params(&mut rng).to_vec();
        let e = small_arch().embedding_dim;
        let mut tp = theta.clone();
        for i in 0..d {
            tp[perm[i] * e..(perm[i] + 1) * e].copy_from_slice(&theta[i * e..(i + 1) * e]);
            tp[net.log_var + perm[i]] = theta[net.log_var + i];
        }
        let a = net
            .log_likelihood(x.view(), dag.to_f64().view(), &theta)
            .unwrap();
        let b = net.log_likelihood(xp.view(), gp.view(), &tp).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
