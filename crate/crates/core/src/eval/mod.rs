//! Posterior-quality metrics and exact small-graph posteriors.

mod bge;
mod mmd;
mod nll;
mod posterior;
mod structural;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bge::{bge_log_marginal, BgeParams, BgeScorer};
pub use mmd::{hamming_kernel, mmd_hamming, mmd_hamming_from_marginals};
pub use nll::{held_out_nll, held_out_nll_values};
pub use posterior::{true_posterior, TruePosterior};
pub use structural::{
    cpdag_shd_values, edge_f1, edge_f1_values, edge_marginals, expected_cpdag_shd, expected_shd,
    f1_score, shd, shd_values, F1Aggregation,
};

use crate::error::Result;
use crate::graphs::DagAdjacency;
use crate::scm::{Dataset, ScmModel};

/// Metrics of one run. Absent metrics serialize as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub e_shd: Option<f64>,
    pub edge_f1: Option<f64>,
    pub nll: Option<f64>,
    pub mmd: Option<f64>,
    pub e_cpdag_shd: Option<f64>,
    pub n_samples: usize,
    /// Normal-approximation 95% half-widths, keyed by metric name.
    pub ci95: BTreeMap<String, f64>,
}

/// `1.96 * sd / sqrt(n)` with the unbiased sample deviation; 0 for `n < 2`.
pub fn ci95_half_width(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    1.96 * (var / n as f64).sqrt()
}

/// Held-out predictive inputs: the model, `(graph, theta)` members and test rows.
pub struct Predictive<'a> {
    pub model: &'a ScmModel,
    pub members: &'a [(DagAdjacency, &'a [f64])],
    pub test: &'a Dataset,
}

/// What to evaluate.
pub struct EvalInputs<'a> {
    pub samples: &'a [DagAdjacency],
    pub truth: Option<&'a DagAdjacency>,
    pub predictive: Option<Predictive<'a>>,
    /// When given, MMD is computed against its exact edge marginals.
    pub true_posterior: Option<&'a TruePosterior>,
    pub f1: F1Aggregation,
}

pub fn evaluate(inputs: &EvalInputs<'_>) -> Result<MetricReport> {
    let mut report = MetricReport {
        n_samples: inputs.samples.len(),
        ..MetricReport::default()
    };
    let put = |report: &mut MetricReport, name: &str, values: &[f64]| {
        report
            .ci95
            .insert(name.to_string(), ci95_half_width(values));
        values.iter().sum::<f64>() / values.len() as f64
    };
    if let Some(truth) = inputs.truth {
        let v = shd_values(inputs.samples, truth)?;
        report.e_shd = Some(put(&mut report, "e_shd", &v));
        let v = cpdag_shd_values(inputs.samples, truth)?;
        report.e_cpdag_shd = Some(put(&mut report, "e_cpdag_shd", &v));
        report.edge_f1 = Some(match inputs.f1 {
            F1Aggregation::PerSample => put(
                &mut report,
                "edge_f1",
                &edge_f1_values(inputs.samples, truth)?,
            ),
            F1Aggregation::MeanAdjacency => {
                edge_f1(inputs.samples, truth, F1Aggregation::MeanAdjacency)?
            }
        });
    }
    if let Some(pred) = &inputs.predictive {
        let v = held_out_nll_values(pred.model, pred.members, pred.test)?;
        report.nll = Some(put(&mut report, "nll", &v));
    }
    if let Some(post) = inputs.true_posterior {
        report.mmd = Some(mmd_hamming_from_marginals(
            &post.edge_marginals(),
            &edge_marginals(inputs.samples),
        )?);
    }
    Ok(report)
}
