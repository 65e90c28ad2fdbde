use crate::error::{Error, Result};
use crate::graphs::DagAdjacency;

/// `k(G, G') = 1 - H(G, G') / d^2` with `H` the Hamming distance between
/// adjacency matrices.
pub fn hamming_kernel(a: &DagAdjacency, b: &DagAdjacency) -> f64 {
    let d = a.d();
    let h = a
        .entries()
        .iter()
        .zip(b.entries())
        .filter(|(x, y)| x != y)
        .count();
    1.0 - h as f64 / (d * d) as f64
}

fn mean_kernel(a: &[DagAdjacency], b: &[DagAdjacency]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += hamming_kernel(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

fn check(p: &[DagAdjacency], q: &[DagAdjacency]) -> Result<usize> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Data("MMD needs nonempty sample sets".into()));
    }
    let d = p[0].d();
    if p.iter().chain(q).any(|g| g.d() != d) {
        return Err(Error::Dimension("MMD samples differ in size".into()));
    }
    Ok(d)
}

/// Squared MMD as a V-statistic (self-pairs included), from all pairs.
pub fn mmd_hamming(p: &[DagAdjacency], q: &[DagAdjacency]) -> Result<f64> {
    check(p, q)?;
    let v = mean_kernel(p, p) + mean_kernel(q, q) - 2.0 * mean_kernel(p, q);
    Ok(v.max(0.0))
}

/// Squared MMD from edge marginals. Since the Hamming kernel is linear in
/// each entry, the V-statistic equals `(2 / d^2) sum_ij (p_ij - q_ij)^2`.
/// With exact marginals of a distribution this is the population value.
pub fn mmd_hamming_from_marginals(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Dimension(format!(
            "marginals have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let sq: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(2.0 * sq / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::structural::edge_marginals;
    use super::*;
    use crate::graphs::enumerate_dags;
    use proptest::prelude::*;

    fn g(d: usize, edges: &[(usize, usize)]) -> DagAdjacency {
        DagAdjacency::from_edges(d, edges).unwrap()
    }

    #[test]
    fn worked_examples() {
        let a = g(2, &[(0, 1)]);
        let b = g(2, &[]);
        assert_eq!(hamming_kernel(&a, &b), 0.75);
        assert_eq!(hamming_kernel(&a, &a), 1.0);
        assert!(
            (mmd_hamming(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap() - 0.5).abs()
                < 1e-15
        );
        let set = vec![a.clone(), b.clone(), a];
        assert_eq!(mmd_hamming(&set, &set).unwrap(), 0.0);
        assert!(mmd_hamming(&[], &set).is_err());
    }

    fn sample_set(d: usize) -> impl Strategy<Value = Vec<DagAdjacency>> {
        let all: Vec<_> = enumerate_dags(d).unwrap().collect();
        proptest::collection::vec(0..all.len(), 1..12)
            .prop_map(move |idx| idx.into_iter().map(|k| all[k].clone()).collect())
    }

    proptest! {
        #[test]
        fn pairwise_and_marginal_routes_agree(p in sample_set(3), q in sample_set(3)) {
            let direct = mmd_hamming(&p, &q).unwrap();
            let via = mmd_hamming_from_marginals(&edge_marginals(&p), &edge_marginals(&q)).unwrap();
            prop_assert!((direct - via).abs() < 1e-12);
            prop_assert!(direct >= 0.0);
            prop_assert!((direct - mmd_hamming(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!(mmd_hamming(&p, &p).unwrap().abs() < 1e-15);
        }
    }
}
