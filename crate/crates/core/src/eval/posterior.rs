use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{count_dags, enumerate_dags, DagAdjacency, MAX_ENUMERATION_NODES};
use crate::scm::Dataset;

use super::bge::BgeScorer;

/// Exact posterior over all DAGs on `d` nodes under a uniform graph prior.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruePosterior {
    pub graphs: Vec<DagAdjacency>,
    /// Normalized log probabilities, sorted in decreasing order.
    pub log_probs: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Enumerates every DAG and normalizes its BGe marginal likelihood.
pub fn true_posterior(data: &Dataset) -> Result<TruePosterior> {
    let d = data.d();
    if d > MAX_ENUMERATION_NODES {
        return Err(Error::SizeLimit(format!(
            "exact posterior needs d <= {MAX_ENUMERATION_NODES}, got d={d}"
        )));
    }
    let scorer = BgeScorer::new(data)?;
    // Every family score is a difference of subset scores; there are 2^d subsets.
    let mut subset = vec![0.0; 1 << d];
    for (mask, slot) in subset.iter_mut().enumerate() {
        let members: Vec<usize> = (0..d).filter(|k| mask >> k & 1 == 1).collect();
        *slot = scorer.subset_log_marginal(&members, members.last().copied().unwrap_or(0))?;
    }
    let count = count_dags(d)? as usize;
    let mut graphs = Vec::with_capacity(count);
    let mut scores = Vec::with_capacity(count);
    for g in enumerate_dags(d)? {
        let mut s = 0.0;
        for j in 0..d {
            let pa: usize = g.parents(j).iter().map(|&k| 1 << k).sum();
            s += subset[pa | 1 << j] - subset[pa];
        }
        graphs.push(g);
        scores.push(s);
    }
    // The uniform prior cancels in the normalization.
    let z = log_sum_exp(&scores);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(TruePosterior {
        graphs: order.iter().map(|&k| graphs[k].clone()).collect(),
        log_probs: order.iter().map(|&k| scores[k] - z).collect(),
    })
}

impl TruePosterior {
    pub fn d(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.d())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    /// `P(i -> j)` in row-major order.
    pub fn edge_marginals(&self) -> Vec<f64> {
        let d = self.d();
        let mut m = vec![0.0; d * d];
        for (g, lp) in self.graphs.iter().zip(&self.log_probs) {
            let p = lp.exp();
            for (acc, &e) in m.iter_mut().zip(g.entries()) {
                *acc += p * f64::from(e);
            }
        }
        m
    }

    /// Exact posterior mean of `f`.
    pub fn expectation(&self, f: impl Fn(&DagAdjacency) -> f64) -> f64 {
        self.graphs
            .iter()
            .zip(&self.log_probs)
            .map(|(g, lp)| lp.exp() * f(g))
            .sum()
    }

    /// `n` independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<DagAdjacency> {
        let dist = WeightedIndex::new(self.probabilities()).expect("normalized weights");
        (0..n)
            .map(|_| self.graphs[dist.sample(rng)].clone())
            .collect()
    }
}
