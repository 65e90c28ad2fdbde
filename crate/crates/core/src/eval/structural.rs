use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{to_cpdag, DagAdjacency};

fn check(samples: &[DagAdjacency], truth: &DagAdjacency) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("no posterior samples".into()));
    }
    if let Some(g) = samples.iter().find(|g| g.d() != truth.d()) {
        return Err(Error::Dimension(format!(
            "sample has d={}, truth has d={}",
            g.d(),
            truth.d()
        )));
    }
    Ok(())
}

/// Structural Hamming distance; a reversed edge counts once.
pub fn shd(a: &DagAdjacency, b: &DagAdjacency) -> usize {
    assert_eq!(a.d(), b.d(), "graphs differ in size");
    let d = a.d();
    let mut count = 0;
    for i in 0..d {
        for j in i + 1..d {
            if (a.has_edge(i, j), a.has_edge(j, i)) != (b.has_edge(i, j), b.has_edge(j, i)) {
                count += 1;
            }
        }
    }
    count
}

/// Per-sample SHD to the truth.
pub fn shd_values(samples: &[DagAdjacency], truth: &DagAdjacency) -> Result<Vec<f64>> {
    check(samples, truth)?;
    Ok(samples.iter().map(|g| shd(g, truth) as f64).collect())
}

pub fn expected_shd(samples: &[DagAdjacency], truth: &DagAdjacency) -> Result<f64> {
    Ok(mean(&shd_values(samples, truth)?))
}

/// How Edge F1 combines posterior samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Aggregation {
    /// F1 of each sample, averaged.
    #[default]
    PerSample,
    /// F1 of the mean adjacency thresholded at 1/2.
    MeanAdjacency,
}

/// F1 of directed edge presence over ordered pairs; 0 when undefined.
pub fn f1_score(pred: &[u8], truth: &[u8]) -> f64 {
    let tp = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p == 1 && **t == 1)
        .count() as f64;
    let fp = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p == 1 && **t == 0)
        .count() as f64;
    let fn_ = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p == 0 && **t == 1)
        .count() as f64;
    // Count form of 2PR/(P+R); zero whenever there are no true positives.
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

pub fn edge_f1_values(samples: &[DagAdjacency], truth: &DagAdjacency) -> Result<Vec<f64>> {
    check(samples, truth)?;
    Ok(samples
        .iter()
        .map(|g| f1_score(g.entries(), truth.entries()))
        .collect())
}

pub fn edge_f1(samples: &[DagAdjacency], truth: &DagAdjacency, how: F1Aggregation) -> Result<f64> {
    match how {
        F1Aggregation::PerSample => Ok(mean(&edge_f1_values(samples, truth)?)),
        F1Aggregation::MeanAdjacency => {
            check(samples, truth)?;
            let marg = edge_marginals(samples);
            let pred: Vec<u8> = marg.iter().map(|&m| u8::from(m > 0.5)).collect();
            Ok(f1_score(&pred, truth.entries()))
        }
    }
}

/// Row-major edge frequencies.
pub fn edge_marginals(samples: &[DagAdjacency]) -> Vec<f64> {
    let d = samples.first().map_or(0, |g| g.d());
    let mut m = vec![0.0; d * d];
    for g in samples {
        for (acc, &e) in m.iter_mut().zip(g.entries()) {
            *acc += f64::from(e);
        }
    }
    let n = samples.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

pub fn cpdag_shd_values(samples: &[DagAdjacency], truth: &DagAdjacency) -> Result<Vec<f64>> {
    check(samples, truth)?;
    let t = to_cpdag(truth);
    Ok(samples.iter().map(|g| to_cpdag(g).shd(&t) as f64).collect())
}

pub fn expected_cpdag_shd(samples: &[DagAdjacency], truth: &DagAdjacency) -> Result<f64> {
    Ok(mean(&cpdag_shd_values(samples, truth)?))
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
