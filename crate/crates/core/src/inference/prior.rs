use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nocurl::{tau, EdgeMask, NodePotentials};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Logit of the per-entry edge prior. A standard normal density restricted
/// to `{0, 1}` and renormalized is Bernoulli with odds `exp(-1/2)`.
pub const EDGE_PRIOR_LOGIT: f64 = -0.5;

/// `sigmoid(-1/2)`.
pub fn edge_prior_probability() -> f64 {
    1.0 / (1.0 + (-EDGE_PRIOR_LOGIT).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Variance of the zero-mean Gaussian prior on node potentials.
    pub alpha: f64,
    /// Penalty per edge of the implied DAG.
    pub lambda_s: f64,
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_s must be nonnegative, got {}",
                self.lambda_s
            )));
        }
        Ok(())
    }
}

/// `sum_k log N(theta_k; 0, 1)`.
pub fn log_prior_theta(theta: ArrayView1<f64>) -> f64 {
    theta.iter().map(|v| -0.5 * (v * v + LN_2PI)).sum()
}

/// `sum_i log N(p_i; 0, alpha)`.
pub fn log_prior_p(p: ArrayView1<f64>, alpha: f64) -> f64 {
    p.iter()
        .map(|v| -0.5 * (v * v / alpha + LN_2PI + alpha.ln()))
        .sum()
}

/// Unnormalized log prior density of `(W, p, Theta)`: Gaussian terms on
/// `Theta` and `p`, the standard normal log-density of every off-diagonal
/// mask entry, and `-lambda_s` per edge of `tau(W, p)`. The edge term is
/// skipped when `lambda_s = 0`, so tied potentials are then allowed.
pub fn log_prior(
    w: &EdgeMask,
    p: &NodePotentials,
    theta: ArrayView1<f64>,
    cfg: &PriorConfig,
) -> Result<f64> {
    let d = w.d();
    let mask_term: f64 = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| {
            let v = if w.get(i, j) { 1.0 } else { 0.0 };
            -0.5 * (v * v + LN_2PI)
        })
        .sum();
    let sparsity = if cfg.lambda_s == 0.0 {
        0.0
    } else {
        cfg.lambda_s * tau(w, p)?.num_edges() as f64
    };
    Ok(log_prior_theta(theta) + log_prior_p(p.view(), cfg.alpha) + mask_term - sparsity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn prior_mode_is_sum_of_normalizers() {
        let cfg = PriorConfig {
            alpha: 0.3,
            lambda_s: 0.0,
        };
        let p = NodePotentials::from_vec(vec![0.0; 3]).unwrap();
        let theta = Array1::zeros(4);
        let lp = log_prior(&EdgeMask::zeros(3), &p, theta.view(), &cfg).unwrap();
        let expected =
            -0.5 * LN_2PI * 4.0 - 0.5 * (LN_2PI + 0.3f64.ln()) * 3.0 - 0.5 * LN_2PI * 6.0;
        assert!((lp - expected).abs() < 1e-12);
        assert!((LN_2PI - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn one_more_edge_costs_lambda() {
        let cfg = PriorConfig {
            alpha: 1.0,
            lambda_s: 7.5,
        };
        let p = NodePotentials::from_vec(vec![2.0, 1.0, 0.0]).unwrap();
        let theta = array![0.3, -0.1];
        let base = EdgeMask::from_entries(3, vec![0, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let more = EdgeMask::from_entries(3, vec![0, 1, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        let a = log_prior(&base, &p, theta.view(), &cfg).unwrap();
        let b = log_prior(&more, &p, theta.view(), &cfg).unwrap();
        // The mask entry itself also moves from 0 to 1: -1/2 from its density.
        assert!((b - a - (-7.5 - 0.5)).abs() < 1e-12);
        // A mask entry that tau discards changes only the density term.
        let back = EdgeMask::from_entries(3, vec![0, 1, 0, 1, 0, 0, 0, 0, 0]).unwrap();
        let c = log_prior(&back, &p, theta.view(), &cfg).unwrap();
        assert!((c - a + 0.5).abs() < 1e-12);
    }

    #[test]
    fn doubling_alpha_halves_quadratic_penalty() {
        let p = array![0.7, -1.2];
        let quad = |alpha: f64| -(log_prior_p(p.view(), alpha) + 0.5 * 2.0 * (LN_2PI + alpha.ln()));
        assert!((quad(2.0) - quad(1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn edge_prior_probability_value() {
        assert!((edge_prior_probability() - 0.377_540_668_798_145_4).abs() < 1e-12);
        assert!(PriorConfig {
            alpha: 0.0,
            lambda_s: 1.0
        }
        .validate()
        .is_err());
        assert!(PriorConfig {
            alpha: 1.0,
            lambda_s: -1.0
        }
        .validate()
        .is_err());
    }
}
