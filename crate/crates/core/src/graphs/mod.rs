//! Directed graph types, random DAG families, CPDAG conversion and
//! exhaustive enumeration of small DAG spaces.

mod cpdag;
mod enumerate;
mod random;

pub use cpdag::{to_cpdag, CpdagAdjacency, PairStatus};
pub use enumerate::{count_dags, enumerate_dags, DagIter, MAX_COUNT_NODES, MAX_ENUMERATION_NODES};
pub use random::{sample_dag, sample_er_dag, sample_sf_dag, GraphFamily, GraphKind};

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary acyclic adjacency matrix. Entry `(i, j) = 1` means `i -> j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct DagAdjacency {
    d: usize,
    entries: Vec<u8>,
}

/// On-disk graph layout: `{"d": int, "adjacency": [[0|1, ...], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphJson {
    pub d: usize,
    pub adjacency: Vec<Vec<u8>>,
}

impl TryFrom<GraphJson> for DagAdjacency {
    type Error = Error;

    fn try_from(g: GraphJson) -> Result<Self> {
        if g.adjacency.len() != g.d || g.adjacency.iter().any(|r| r.len() != g.d) {
            return Err(Error::Dimension(format!("adjacency must be {0}x{0}", g.d)));
        }
        let mut entries = Vec::with_capacity(g.d * g.d);
        for row in &g.adjacency {
            for &v in row {
                if v > 1 {
                    return Err(Error::Data(format!("adjacency entry {v} is not binary")));
                }
                entries.push(v);
            }
        }
        DagAdjacency::from_entries(g.d, entries)
    }
}

impl From<DagAdjacency> for GraphJson {
    fn from(g: DagAdjacency) -> Self {
        GraphJson {
            d: g.d,
            adjacency: g
                .entries
                .chunks(g.d.max(1))
                .map(|r| r.to_vec())
                .take(g.d)
                .collect(),
        }
    }
}

impl DagAdjacency {
    /// Graph with `d` nodes and no edges.
    pub fn empty(d: usize) -> Self {
        DagAdjacency {
            d,
            entries: vec![0; d * d],
        }
    }

    /// Validates a row-major binary matrix and wraps it.
    pub fn from_entries(d: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::Dimension(format!(
                "expected {} entries, got {}",
                d * d,
                entries.len()
            )));
        }
        let g = DagAdjacency { d, entries };
        topological_order_flat(d, &g.entries)?;
        Ok(g)
    }

    pub fn from_array(adj: ArrayView2<u8>) -> Result<Self> {
        let (r, c) = adj.dim();
        if r != c {
            return Err(Error::Dimension(format!("adjacency is {r}x{c}")));
        }
        Self::from_entries(r, adj.iter().copied().collect())
    }

    /// Builds a DAG from a list of directed edges.
    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut entries = vec![0; d * d];
        for &(i, j) in edges {
            if i >= d || j >= d {
                return Err(Error::Dimension(format!(
                    "edge ({i}, {j}) out of range for d={d}"
                )));
            }
            entries[i * d + j] = 1;
        }
        Self::from_entries(d, entries)
    }

    /// Wraps entries already known to be acyclic.
    pub(crate) fn from_entries_unchecked(d: usize, entries: Vec<u8>) -> Self {
        debug_assert!(topological_order_flat(d, &entries).is_ok());
        DagAdjacency { d, entries }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.d + j] == 1
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn num_edges(&self) -> usize {
        self.entries.iter().map(|&v| v as usize).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d = self.d;
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(k, _)| (k / d, k % d))
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.has_edge(i, j)).collect()
    }

    /// Whether `i` and `j` are joined by an edge in either direction.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.has_edge(i, j) || self.has_edge(j, i)
    }

    pub fn to_array(&self) -> Array2<u8> {
        Array2::from_shape_vec((self.d, self.d), self.entries.clone()).expect("entries are d x d")
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.to_array().mapv(f64::from)
    }

    /// Relabels nodes: node `i` becomes node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let mut entries = vec![0; d * d];
        for (i, j) in self.edges() {
            entries[perm[i] * d + perm[j]] = 1;
        }
        DagAdjacency { d, entries }
    }
}

/// True iff the square binary matrix has no directed cycle. A nonzero
/// diagonal entry is a self-loop and therefore a cycle.
pub fn is_acyclic(adj: ArrayView2<u8>) -> Result<bool> {
    let (r, c) = adj.dim();
    if r != c {
        return Err(Error::Dimension(format!("adjacency is {r}x{c}")));
    }
    let entries: Vec<u8> = adj.iter().map(|&v| u8::from(v != 0)).collect();
    Ok(topological_order_flat(r, &entries).is_ok())
}

/// Topological order using Kahn's algorithm; ties are broken by smallest
/// node index.
pub fn topological_order(g: &DagAdjacency) -> Vec<usize> {
    topological_order_flat(g.d, &g.entries).expect("DagAdjacency is acyclic")
}

/// Topological order of an arbitrary square binary matrix, or a cycle error
/// naming one edge that lies on a cycle.
pub fn topological_order_of(adj: ArrayView2<u8>) -> Result<Vec<usize>> {
    let (r, c) = adj.dim();
    if r != c {
        return Err(Error::Dimension(format!("adjacency is {r}x{c}")));
    }
    let entries: Vec<u8> = adj.iter().map(|&v| u8::from(v != 0)).collect();
    topological_order_flat(r, &entries)
}

fn topological_order_flat(d: usize, entries: &[u8]) -> Result<Vec<usize>> {
    let mut indeg = vec![0usize; d];
    for i in 0..d {
        for j in 0..d {
            if entries[i * d + j] != 0 {
                indeg[j] += 1;
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<usize>> =
        (0..d).filter(|&j| indeg[j] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(Reverse(i)) = heap.pop() {
        order.push(i);
        for j in 0..d {
            if entries[i * d + j] != 0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    heap.push(Reverse(j));
                }
            }
        }
    }
    if order.len() == d {
        return Ok(order);
    }
    // Every remaining node has a predecessor among the remaining nodes, so
    // walking predecessors must revisit a node.
    let mut remaining = vec![true; d];
    for &i in &order {
        remaining[i] = false;
    }
    let start = (0..d).find(|&i| remaining[i]).expect("some node remains");
    let mut seen = vec![false; d];
    let mut node = start;
    loop {
        seen[node] = true;
        let pred = (0..d)
            .find(|&i| remaining[i] && entries[i * d + node] != 0)
            .expect("remaining node has a remaining predecessor");
        if seen[pred] {
            return Err(Error::Cycle {
                from: pred,
                to: node,
            });
        }
        node = pred;
    }
}
