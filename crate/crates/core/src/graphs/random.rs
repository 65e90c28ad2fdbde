use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DagAdjacency;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    #[serde(alias = "er")]
    ErdosRenyi,
    #[serde(alias = "sf")]
    ScaleFree,
}

/// A random graph family with a target expected edge count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFamily {
    pub kind: GraphKind,
    pub d: usize,
    pub expected_edges: usize,
}

impl GraphFamily {
    pub fn new(kind: GraphKind, d: usize, expected_edges: usize) -> Result<Self> {
        let f = GraphFamily {
            kind,
            d,
            expected_edges,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn max_edges(&self) -> usize {
        self.d * self.d.saturating_sub(1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.expected_edges > self.max_edges() {
            return Err(Error::Config(format!(
                "expected_edges {} exceeds d(d-1)/2 = {} for d={}",
                self.expected_edges,
                self.max_edges(),
                self.d
            )));
        }
        Ok(())
    }

    /// Preferential-attachment edge count per arriving node.
    pub fn attachment_count(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            (self.expected_edges as f64 / self.d as f64).round() as usize
        }
    }
}

/// Draws from whichever family `family.kind` names.
pub fn sample_dag<R: Rng + ?Sized>(family: &GraphFamily, rng: &mut R) -> Result<DagAdjacency> {
    match family.kind {
        GraphKind::ErdosRenyi => sample_er_dag(family, rng),
        GraphKind::ScaleFree => sample_sf_dag(family, rng),
    }
}

/// Erdős–Rényi DAG: every unordered pair is kept independently with
/// probability `expected_edges / (d(d-1)/2)` and oriented from lower to
/// higher rank under one uniformly random node permutation.
pub fn sample_er_dag<R: Rng + ?Sized>(family: &GraphFamily, rng: &mut R) -> Result<DagAdjacency> {
    if family.kind != GraphKind::ErdosRenyi {
        return Err(Error::Config(
            "sample_er_dag needs an ErdosRenyi family".into(),
        ));
    }
    family.validate()?;
    let d = family.d;
    let mut entries = vec![0u8; d * d];
    if family.max_edges() == 0 {
        return Ok(DagAdjacency::from_entries_unchecked(d, entries));
    }
    let prob = family.expected_edges as f64 / family.max_edges() as f64;
    let mut rank: Vec<usize> = (0..d).collect();
    rank.shuffle(rng);
    for a in 0..d {
        for b in (a + 1)..d {
            if rng.random::<f64>() < prob {
                let (from, to) = if rank[a] < rank[b] { (a, b) } else { (b, a) };
                entries[from * d + to] = 1;
            }
        }
    }
    Ok(DagAdjacency::from_entries_unchecked(d, entries))
}

/// Barabási–Albert DAG over a random arrival order. The first two arrivals
/// are joined by one edge; each later arrival attaches
/// `round(expected_edges / d)` edges to distinct existing nodes chosen with
/// probability proportional to degree. Edges point from the arriving node to
/// the existing node.
pub fn sample_sf_dag<R: Rng + ?Sized>(family: &GraphFamily, rng: &mut R) -> Result<DagAdjacency> {
    if family.kind != GraphKind::ScaleFree {
        return Err(Error::Config(
            "sample_sf_dag needs a ScaleFree family".into(),
        ));
    }
    family.validate()?;
    let d = family.d;
    let m = family.attachment_count();
    if d > 0 && m >= d {
        return Err(Error::Config(format!(
            "attachment count {m} must be < d = {d}"
        )));
    }
    let mut entries = vec![0u8; d * d];
    if m == 0 || d < 2 {
        return Ok(DagAdjacency::from_entries_unchecked(d, entries));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut degree = vec![0usize; d];
    entries[order[1] * d + order[0]] = 1;
    degree[order[0]] += 1;
    degree[order[1]] += 1;

    let mut chosen = Vec::with_capacity(m);
    for k in 2..d {
        let v = order[k];
        let existing = &order[..k];
        chosen.clear();
        let take = m.min(k);
        while chosen.len() < take {
            let total: usize = existing
                .iter()
                .filter(|u| !chosen.contains(*u))
                .map(|&u| degree[u])
                .sum();
            let mut ticket = rng.random_range(0..total);
            let target = existing
                .iter()
                .copied()
                .filter(|u| !chosen.contains(u))
                .find(|&u| {
                    if ticket < degree[u] {
                        true
                    } else {
                        ticket -= degree[u];
                        false
                    }
                })
                .expect("ticket falls inside total weight");
            chosen.push(target);
        }
        for &u in &chosen {
            entries[v * d + u] = 1;
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    Ok(DagAdjacency::from_entries_unchecked(d, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::is_acyclic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_degree(g: &DagAdjacency) -> usize {
        let d = g.d();
        (0..d)
            .map(|i| (0..d).filter(|&j| g.adjacent(i, j)).count())
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn er_mean_edge_count() {
        let fam = GraphFamily::new(GraphKind::ErdosRenyi, 5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|_| sample_er_dag(&fam, &mut rng).unwrap().num_edges())
            .sum();
        let mean = total as f64 / draws as f64;
        assert!((mean - 5.0).abs() < 0.2, "mean edges {mean}");
    }

    #[test]
    fn er_degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = GraphFamily::new(GraphKind::ErdosRenyi, 5, 0).unwrap();
        let full = GraphFamily::new(GraphKind::ErdosRenyi, 5, 10).unwrap();
        for _ in 0..200 {
            assert_eq!(sample_er_dag(&empty, &mut rng).unwrap().num_edges(), 0);
            let g = sample_er_dag(&full, &mut rng).unwrap();
            assert_eq!(g.num_edges(), 10);
            assert!(is_acyclic(g.to_array().view()).unwrap());
        }
    }

    #[test]
    fn too_many_expected_edges_is_config_error() {
        assert!(matches!(
            GraphFamily::new(GraphKind::ErdosRenyi, 5, 11),
            Err(Error::Config(_))
        ));
        let fam = GraphFamily {
            kind: GraphKind::ErdosRenyi,
            d: 4,
            expected_edges: 7,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_er_dag(&fam, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sf_edge_counts_follow_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = GraphFamily::new(GraphKind::ScaleFree, 5, 5).unwrap();
        let two = GraphFamily::new(GraphKind::ScaleFree, 10, 20).unwrap();
        for _ in 0..100 {
            let g = sample_sf_dag(&tree, &mut rng).unwrap();
            assert_eq!(g.num_edges(), 4);
            assert!(is_acyclic(g.to_array().view()).unwrap());
            let g = sample_sf_dag(&two, &mut rng).unwrap();
            assert_eq!(g.num_edges(), 2 * (10 - 2) + 1);
        }
    }

    #[test]
    fn sf_attachment_must_be_below_d() {
        let fam = GraphFamily::new(GraphKind::ScaleFree, 3, 3).unwrap();
        let fam = GraphFamily {
            expected_edges: 9,
            ..fam
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_sf_dag(&fam, &mut rng).is_err());
    }

    #[test]
    fn sf_is_heavier_tailed_than_er() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let er = GraphFamily::new(GraphKind::ErdosRenyi, 50, 100).unwrap();
        let sf = GraphFamily::new(GraphKind::ScaleFree, 50, 100).unwrap();
        let draws = 1000;
        let (mut er_max, mut sf_max) = (0usize, 0usize);
        for _ in 0..draws {
            er_max += max_degree(&sample_er_dag(&er, &mut rng).unwrap());
            sf_max += max_degree(&sample_sf_dag(&sf, &mut rng).unwrap());
        }
        assert!(sf_max > er_max, "sf {sf_max} vs er {er_max}");
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let fam = GraphFamily::new(GraphKind::ScaleFree, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_er_dag(&fam, &mut rng).is_err());
    }
}
