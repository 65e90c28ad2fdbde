use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dagpost::eval::{edge_marginals, true_posterior};
use dagpost::graphs::DagAdjacency;
use dagpost::inference::{gibbs_train, TrainConfig};
use dagpost::scm::{ancestral_sample, make_ground_truth, ModelKind};

/// Probability that `i` and `j` are adjacent in either direction.
fn adjacency(m: &[f64], d: usize, i: usize, j: usize) -> f64 {
    m[i * d + j] + m[j * d + i]
}

// Orientation inside the chain's equivalence class is not identifiable, so
// the comparison is on adjacencies.
#[test]
fn chain_adjacencies_rank_above_the_non_edge() {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let chain = DagAdjacency::from_edges(d, &[(0, 1), (1, 2)]).unwrap();
    let truth = make_ground_truth(&chain, ModelKind::Linear, &mut rng);
    let data = ancestral_sample(&truth, 2000, &mut rng).unwrap();

    let exact = true_posterior(&data).unwrap().edge_marginals();
    assert!(
        adjacency(&exact, d, 0, 1).min(adjacency(&exact, d, 1, 2)) > adjacency(&exact, d, 0, 2)
    );

    let cfg = TrainConfig {
        epochs: 1500,
        lambda_s: 10.0,
        scale_p: 1.0,
        scale_theta: 0.001,
        vi_lr: 0.01,
        sparse_init: true,
        ..TrainConfig::default()
    };
    let out = gibbs_train(&data, &cfg).unwrap();
    let graphs: Vec<_> = out
        .sample_graphs(&data, 1, &mut rng)
        .unwrap()
        .into_iter()
        .map(|s| s.graph)
        .collect();
    let m = edge_marginals(&graphs);
    let non_edge = adjacency(&m, d, 0, 2);
    assert!(adjacency(&m, d, 0, 1) > non_edge, "{m:?}");
    assert!(adjacency(&m, d, 1, 2) > non_edge, "{m:?}");
}
