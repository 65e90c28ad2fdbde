use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graphs::DagAdjacency;
use crate::scm::Dataset;

/// Gaussian-Wishart hyperparameters of the BGe score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BgeParams {
    pub alpha_mu: f64,
    pub alpha_w: f64,
    /// Diagonal of the prior matrix `T = t I`.
    pub t: f64,
}

impl BgeParams {
    /// `alpha_mu = 1`, `alpha_w = d + 2`, `t = alpha_mu (alpha_w - d - 1) / (alpha_mu + 1)`.
    pub fn default_for(d: usize) -> Self {
        let alpha_mu = 1.0;
        let alpha_w = d as f64 + 2.0;
        BgeParams {
            alpha_mu,
            alpha_w,
            t: alpha_mu * (alpha_w - d as f64 - 1.0) / (alpha_mu + 1.0),
        }
    }
}

/// Sufficient statistics for BGe scores of one dataset; prior mean zero.
#[derive(Clone, Debug)]
pub struct BgeScorer {
    d: usize,
    n: usize,
    params: BgeParams,
    /// Posterior scale `R = T + S_N + (N a_mu / (N + a_mu)) xbar xbarᵀ`.
    r: DMatrix<f64>,
}

fn ln_multi_gamma(dim: usize, a: f64) -> f64 {
    let p = dim as f64;
    p * (p - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=dim)
            .map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0))
            .sum::<f64>()
}

impl BgeScorer {
    pub fn new(data: &Dataset) -> Result<Self> {
        Self::with_params(data, BgeParams::default_for(data.d()))
    }

    pub fn with_params(data: &Dataset, params: BgeParams) -> Result<Self> {
        let d = data.d();
        let n = data.n();
        if !(params.alpha_w > d as f64 - 1.0) || !(params.alpha_mu > 0.0) || !(params.t > 0.0) {
            return Err(Error::Config(format!(
                "invalid BGe hyperparameters {params:?} for d={d}"
            )));
        }
        let x = data.view();
        let mut mean = DVector::zeros(d);
        for row in x.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean /= n as f64;
        let mut r = DMatrix::identity(d, d) * params.t;
        for row in x.rows() {
            let c = DVector::from_iterator(d, row.iter().zip(mean.iter()).map(|(v, m)| v - m));
            r += &c * c.transpose();
        }
        let nf = n as f64;
        r += (&mean * mean.transpose()) * (nf * params.alpha_mu / (nf + params.alpha_mu));
        Ok(BgeScorer { d, n, params, r })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Log marginal likelihood of the columns in `subset` under a complete
    /// graph on them. `node` only labels errors.
    pub fn subset_log_marginal(&self, subset: &[usize], node: usize) -> Result<f64> {
        let l = subset.len();
        if l == 0 {
            return Ok(0.0);
        }
        let d = self.d as f64;
        let lf = l as f64;
        let nf = self.n as f64;
        let BgeParams {
            alpha_mu,
            alpha_w,
            t,
        } = self.params;
        let r_sub = DMatrix::from_fn(l, l, |a, b| self.r[(subset[a], subset[b])]);
        let chol = r_sub.cholesky().ok_or_else(|| {
            Error::Numeric(format!(
                "BGe scale matrix for node {node} and parents {subset:?} is not positive definite"
            ))
        })?;
        let log_det_r = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det_r.is_finite() {
            return Err(Error::Numeric(format!(
                "BGe scale matrix for node {node} and parents {subset:?} has log-determinant {log_det_r}"
            )));
        }
        let log_det_t = lf * t.ln();
        let a0 = (alpha_w - d + lf) / 2.0;
        let an = (nf + alpha_w - d + lf) / 2.0;
        Ok(-(lf * nf / 2.0) * std::f64::consts::PI.ln()
            + (lf / 2.0) * (alpha_mu / (nf + alpha_mu)).ln()
            + ln_multi_gamma(l, an)
            - ln_multi_gamma(l, a0)
            + a0 * log_det_t
            - an * log_det_r)
    }

    /// Local score of `node` given `parents`.
    pub fn local_score(&self, node: usize, parents: &[usize]) -> Result<f64> {
        let mut family = parents.to_vec();
        family.push(node);
        Ok(self.subset_log_marginal(&family, node)? - self.subset_log_marginal(parents, node)?)
    }

    pub fn log_marginal(&self, g: &DagAdjacency) -> Result<f64> {
        if g.d() != self.d {
            return Err(Error::Dimension(format!(
                "graph has d={}, data has d={}",
                g.d(),
                self.d
            )));
        }
        (0..self.d)
            .map(|j| self.local_score(j, &g.parents(j)))
            .sum()
    }
}

/// BGe log marginal likelihood `log p(D | G)` with the default hyperparameters.
pub fn bge_log_marginal(data: &Dataset, g: &DagAdjacency) -> Result<f64> {
    BgeScorer::new(data)?.log_marginal(g)
}
