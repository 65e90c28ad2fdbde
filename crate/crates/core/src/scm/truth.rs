use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{gaussian_log_density, Dataset, ModelKind};
use crate::error::{Error, Result};
use crate::graphs::{topological_order, DagAdjacency};

/// Hidden width of the ground-truth mechanism networks.
pub const MLP_GROUND_TRUTH_HIDDEN: usize = 5;

/// One node's ground-truth network `w2 · relu(W1 x + b1)`; `W1` spans all
/// `d` inputs and is zero outside the node's parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpNode {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl MlpNode {
    fn eval(&self, x: ArrayView1<f64>, parents: impl Fn(usize) -> bool) -> f64 {
        let mut out = 0.0;
        for ((row, b), w) in self.w1.iter().zip(&self.b1).zip(&self.w2) {
            let mut a = *b;
            for (j, wv) in row.iter().enumerate() {
                if parents(j) {
                    a += wv * x[j];
                }
            }
            out += w * a.max(0.0);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// `weights[j][i]`: coefficient of `x_j` in the equation for `x_i`.
    Linear { weights: Vec<Vec<f64>> },
    /// `None` for nodes without parents, whose mean is zero.
    Mlp { nodes: Vec<Option<MlpNode>> },
}

/// Data-generating model: graph, mechanisms and noise variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub graph: DagAdjacency,
    pub mechanism: Mechanism,
    pub noise_var: Vec<f64>,
}

/// Linear weights have magnitude `U[0.5, 1.5]` and a fair random sign; MLP
/// mechanisms use standard-normal weights and biases; every noise variance
/// is drawn from `InverseGamma(1.5, 1)`.
pub fn make_ground_truth<R: Rng + ?Sized>(
    graph: &DagAdjacency,
    kind: ModelKind,
    rng: &mut R,
) -> GroundTruth {
    let d = graph.d();
    let mechanism = match kind {
        ModelKind::Linear => {
            let mut weights = vec![vec![0.0; d]; d];
            for (j, i) in graph.edges() {
                let mag: f64 = rng.random_range(0.5..=1.5);
                weights[j][i] = if rng.random::<bool>() { mag } else { -mag };
            }
            Mechanism::Linear { weights }
        }
        ModelKind::Mlp => {
            let mut nodes = Vec::with_capacity(d);
            for i in 0..d {
                let parents = graph.parents(i);
                if parents.is_empty() {
                    nodes.push(None);
                    continue;
                }
                let mut w1 = vec![vec![0.0; d]; MLP_GROUND_TRUTH_HIDDEN];
                for row in &mut w1 {
                    for &j in &parents {
                        row[j] = rng.sample(StandardNormal);
                    }
                }
                let b1 = (0..MLP_GROUND_TRUTH_HIDDEN)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let w2 = (0..MLP_GROUND_TRUTH_HIDDEN)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                nodes.push(Some(MlpNode { w1, b1, w2 }));
            }
            Mechanism::Mlp { nodes }
        }
    };
    GroundTruth {
        graph: graph.clone(),
        mechanism,
        noise_var: sample_inverse_gamma(d, rng),
    }
}

fn sample_inverse_gamma<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.5, 1.0).expect("valid shape and scale");
    (0..d).map(|_| 1.0 / gamma.sample(rng)).collect()
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.graph.d()
    }

    pub fn kind(&self) -> ModelKind {
        match self.mechanism {
            Mechanism::Linear { .. } => ModelKind::Linear,
            Mechanism::Mlp { .. } => ModelKind::Mlp,
        }
    }

    fn node_mean(&self, i: usize, x: ArrayView1<f64>, graph: &DagAdjacency) -> f64 {
        match &self.mechanism {
            Mechanism::Linear { weights } => (0..self.d())
                .filter(|&j| graph.has_edge(j, i))
                .map(|j| weights[j][i] * x[j])
                .sum(),
            Mechanism::Mlp { nodes } => match &nodes[i] {
                Some(node) => node.eval(x, |j| graph.has_edge(j, i)),
                None => 0.0,
            },
        }
    }

    /// Means of every node, with the mechanisms masked by `graph` (which
    /// need not be the generating graph).
    pub fn means(&self, x: ArrayView2<f64>, graph: &DagAdjacency) -> Array2<f64> {
        let d = self.d();
        let mut out = Array2::zeros((x.nrows(), d));
        for (n, row) in x.rows().into_iter().enumerate() {
            for i in 0..d {
                out[[n, i]] = self.node_mean(i, row, graph);
            }
        }
        out
    }

    /// `sum_n sum_i log N(x_ni - f_i(x_n); 0, sigma_i^2)` under `graph`.
    pub fn log_likelihood(&self, data: &Dataset, graph: &DagAdjacency) -> Result<f64> {
        if data.d() != self.d() || graph.d() != self.d() {
            return Err(Error::Dimension(format!(
                "truth d={} vs data d={}",
                self.d(),
                data.d()
            )));
        }
        if self.noise_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Numeric(
                "log-likelihood needs positive noise variances".into(),
            ));
        }
        let means = self.means(data.view(), graph);
        let mut total = 0.0;
        for (xr, mr) in data.view().rows().into_iter().zip(means.rows()) {
            for i in 0..self.d() {
                total += gaussian_log_density(xr[i] - mr[i], self.noise_var[i]);
            }
        }
        Ok(total)
    }
}

/// Samples `n` rows in topological order: `x_i = f_i(x_pa(i)) + eps_i`.
pub fn ancestral_sample<R: Rng + ?Sized>(
    truth: &GroundTruth,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let d = truth.d();
    if truth.noise_var.len() != d {
        return Err(Error::Dimension(
            "one noise variance per node required".into(),
        ));
    }
    if truth.noise_var.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Numeric("noise variances must be nonnegative".into()));
    }
    let order = topological_order(&truth.graph);
    let sd: Vec<f64> = truth.noise_var.iter().map(|v| v.sqrt()).collect();
    let mut x = Array2::zeros((n, d));
    let mut row = Array1::zeros(d);
    for r in 0..n {
        row.fill(0.0);
        for &i in &order {
            let noise: f64 = if sd[i] > 0.0 {
                sd[i] * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            row[i] = truth.node_mean(i, row.view(), &truth.graph) + noise;
        }
        x.row_mut(r).assign(&row);
    }
    Dataset::new(x)
}
