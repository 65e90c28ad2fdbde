use serde::{Deserialize, Serialize};

use super::DagAdjacency;

/// Completed partially directed acyclic graph of a Markov equivalence class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CpdagAdjacency {
    d: usize,
    /// `directed[i * d + j] = 1` for a compelled edge `i -> j`.
    directed: Vec<u8>,
    /// Symmetric; `1` in both `(i, j)` and `(j, i)` for a reversible edge.
    undirected: Vec<u8>,
}

/// Relationship of an unordered node pair in a CPDAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairStatus {
    None,
    Forward,
    Backward,
    Undirected,
}

impl CpdagAdjacency {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_directed(&self, i: usize, j: usize) -> bool {
        self.directed[i * self.d + j] == 1
    }

    pub fn is_undirected(&self, i: usize, j: usize) -> bool {
        self.undirected[i * self.d + j] == 1
    }

    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let d = self.d;
        (0..d * d)
            .filter(|&k| self.directed[k] == 1)
            .map(|k| (k / d, k % d))
            .collect()
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let d = self.d;
        (0..d)
            .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_undirected(i, j))
            .collect()
    }

    /// Status of the pair `(i, j)` seen from `i`.
    pub fn pair(&self, i: usize, j: usize) -> PairStatus {
        if self.is_undirected(i, j) {
            PairStatus::Undirected
        } else if self.is_directed(i, j) {
            PairStatus::Forward
        } else if self.is_directed(j, i) {
            PairStatus::Backward
        } else {
            PairStatus::None
        }
    }

    /// Structural Hamming distance: one per unordered pair whose status
    /// differs, so a directed/undirected mismatch on a shared skeleton edge
    /// counts once.
    pub fn shd(&self, other: &CpdagAdjacency) -> usize {
        assert_eq!(self.d, other.d, "CPDAGs must have equal node count");
        let d = self.d;
        let mut count = 0;
        for i in 0..d {
            for j in (i + 1)..d {
                if self.pair(i, j) != other.pair(i, j) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// CPDAG of `g`'s Markov equivalence class: orient v-structures, then close
/// under Meek rules R1-R3. Remaining skeleton edges are reversible.
pub fn to_cpdag(g: &DagAdjacency) -> CpdagAdjacency {
    let d = g.d();
    let adjacent = |a: usize, b: usize| g.adjacent(a, b);
    // oriented[a * d + b]: a -> b is compelled.
    let mut oriented = vec![false; d * d];
    for c in 0..d {
        let parents = g.parents(c);
        for (k, &a) in parents.iter().enumerate() {
            for &b in &parents[k + 1..] {
                if !adjacent(a, b) {
                    oriented[a * d + c] = true;
                    oriented[b * d + c] = true;
                }
            }
        }
    }
    let is_undirected =
        |o: &[bool], a: usize, b: usize| adjacent(a, b) && !o[a * d + b] && !o[b * d + a];

    let mut changed = true;
    while changed {
        changed = false;
        for a in 0..d {
            for b in 0..d {
                if a == b || !is_undirected(&oriented, a, b) {
                    continue;
                }
                let mut orient = false;
                for c in 0..d {
                    if c == a || c == b {
                        continue;
                    }
                    // R1: c -> a - b with c, b nonadjacent.
                    if oriented[c * d + a] && !adjacent(c, b) {
                        orient = true;
                        break;
                    }
                    // R2: a -> c -> b with a - b.
                    if oriented[a * d + c] && oriented[c * d + b] {
                        orient = true;
                        break;
                    }
                }
                if !orient {
                    // R3: a - c -> b and a - e -> b with c, e nonadjacent.
                    let mids: Vec<usize> = (0..d)
                        .filter(|&c| {
                            c != a
                                && c != b
                                && is_undirected(&oriented, a, c)
                                && oriented[c * d + b]
                        })
                        .collect();
                    'outer: for (k, &c) in mids.iter().enumerate() {
                        for &e in &mids[k + 1..] {
                            if !adjacent(c, e) {
                                orient = true;
                                break 'outer;
                            }
                        }
                    }
                }
                if orient {
                    debug_assert!(g.has_edge(a, b), "Meek rule contradicts the source DAG");
                    oriented[a * d + b] = true;
                    changed = true;
                }
            }
        }
    }

    let mut directed = vec![0u8; d * d];
    let mut undirected = vec![0u8; d * d];
    for a in 0..d {
        for b in 0..d {
            if oriented[a * d + b] {
                directed[a * d + b] = 1;
            } else if is_undirected(&oriented, a, b) {
                undirected[a * d + b] = 1;
            }
        }
    }
    CpdagAdjacency {
        d,
        directed,
        undirected,
    }
}
