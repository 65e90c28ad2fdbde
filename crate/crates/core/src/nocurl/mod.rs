//! The `(W, p) -> G` map and its differentiable relaxation.
//!
//! `tau(W, p)` keeps edge `i -> j` iff `W[i][j] = 1` and `p_i > p_j`. The same
//! graph is `W ⊙ σ L σᵀ` with `σ` the ranking permutation of `p`, which lets
//! gradients with respect to `p` pass through a Sinkhorn relaxation of `σ`.

mod hungarian;
mod sinkhorn;

pub use hungarian::{assignment_value, hungarian};
pub use sinkhorn::{sinkhorn, sinkhorn_with_tape, SinkhornTape, TransportPlan};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::DagAdjacency;

/// Potentials closer than this are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_SINKHORN_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_SINKHORN_MAX_ITERS: usize = 3000;
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-3;

/// Real-valued node potentials. Larger potential means earlier in the
/// implied topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct NodePotentials(Array1<f64>);

impl NodePotentials {
    pub fn new(p: Array1<f64>) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("node potentials must be finite".into()));
        }
        Ok(NodePotentials(p))
    }

    pub fn from_vec(p: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(p))
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// Errors on the first pair of potentials within [`TIE_TOLERANCE`].
    pub fn check_distinct(&self) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.d()).collect();
        idx.sort_by(|&a, &b| self.0[a].total_cmp(&self.0[b]));
        for w in idx.windows(2) {
            if (self.0[w[1]] - self.0[w[0]]).abs() <= TIE_TOLERANCE {
                let (i, j) = (w[0].min(w[1]), w[0].max(w[1]));
                return Err(Error::DegeneratePotential {
                    i,
                    j,
                    tol: TIE_TOLERANCE,
                });
            }
        }
        Ok(())
    }
}

/// Binary edge mask with a zero diagonal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeMask {
    d: usize,
    entries: Vec<u8>,
}

impl EdgeMask {
    /// Row-major binary entries; the diagonal is zeroed.
    pub fn from_entries(d: usize, mut entries: Vec<u8>) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::Dimension(format!(
                "mask needs {} entries, got {}",
                d * d,
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask entry {v} is not binary")));
        }
        for i in 0..d {
            entries[i * d + i] = 0;
        }
        Ok(EdgeMask { d, entries })
    }

    pub fn from_array(w: ArrayView2<u8>) -> Result<Self> {
        let (r, c) = w.dim();
        if r != c {
            return Err(Error::Dimension(format!("mask is {r}x{c}")));
        }
        Self::from_entries(r, w.iter().copied().collect())
    }

    pub fn ones(d: usize) -> Self {
        Self::from_entries(d, vec![1; d * d]).expect("valid shape")
    }

    pub fn zeros(d: usize) -> Self {
        EdgeMask {
            d,
            entries: vec![0; d * d],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.d + j] == 1
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn num_active(&self) -> usize {
        self.entries.iter().map(|&v| v as usize).sum()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.d, self.d), |(i, j)| {
            f64::from(self.entries[i * self.d + j])
        })
    }
}

/// Permutation stored as a rank vector: node `i` has (zero-based) rank
/// `ranks[i]`, so the matrix form has `σ(i, ranks[i]) = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    ranks: Vec<usize>,
}

impl Permutation {
    pub fn identity(d: usize) -> Self {
        Permutation {
            ranks: (0..d).collect(),
        }
    }

    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        let d = ranks.len();
        let mut seen = vec![false; d];
        for &r in &ranks {
            if r >= d || seen[r] {
                return Err(Error::Contract(format!("{ranks:?} is not a permutation")));
            }
            seen[r] = true;
        }
        Ok(Permutation { ranks })
    }

    /// Validates a square binary matrix with one 1 per row and column.
    pub fn from_matrix(sigma: ArrayView2<f64>) -> Result<Self> {
        let (r, c) = sigma.dim();
        if r != c {
            return Err(Error::Dimension(format!("permutation matrix is {r}x{c}")));
        }
        let mut ranks = Vec::with_capacity(r);
        for row in sigma.rows() {
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Contract("permutation matrix must be binary".into()));
            }
            let ones: Vec<usize> = (0..c).filter(|&k| row[k] == 1.0).collect();
            if ones.len() != 1 {
                return Err(Error::Contract("each row needs exactly one 1".into()));
            }
            ranks.push(ones[0]);
        }
        Self::from_ranks(ranks)
    }

    pub fn d(&self) -> usize {
        self.ranks.len()
    }

    /// Zero-based ranks.
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// `σ o` with `o = [1, ..., d]`: the one-based rank of each node.
    pub fn rank_vector(&self) -> Vec<usize> {
        self.ranks.iter().map(|r| r + 1).collect()
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let d = self.d();
        let mut m = Array2::zeros((d, d));
        for (i, &k) in self.ranks.iter().enumerate() {
            m[[i, k]] = 1.0;
        }
        m
    }
}

/// Sinkhorn temperature and stopping rule plus the fixed `L` and `o`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationConstants {
    pub d: usize,
    pub temperature: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl RelaxationConstants {
    pub fn new(d: usize) -> Self {
        RelaxationConstants {
            d,
            temperature: DEFAULT_SINKHORN_TEMPERATURE,
            max_iters: DEFAULT_SINKHORN_MAX_ITERS,
            tol: DEFAULT_SINKHORN_TOL,
        }
    }

    /// Strictly lower triangular all-ones matrix: `L(i, j) = 1` iff `i > j`.
    pub fn lower_triangular(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.d, self.d), |(i, j)| if i > j { 1.0 } else { 0.0 })
    }

    /// `o = [1, ..., d]`.
    pub fn order_vector(&self) -> Array1<f64> {
        Array1::from_iter((1..=self.d).map(|k| k as f64))
    }
}

/// `M(i, j) = p_i - p_j`.
pub fn grad_op(p: &NodePotentials) -> Array2<f64> {
    let d = p.d();
    Array2::from_shape_fn((d, d), |(i, j)| p.0[i] - p.0[j])
}

/// `G = W ⊙ step(grad p)`.
pub fn tau(w: &EdgeMask, p: &NodePotentials) -> Result<DagAdjacency> {
    let d = check_dims(w, p)?;
    p.check_distinct()?;
    let mut entries = vec![0u8; d * d];
    for i in 0..d {
        for j in 0..d {
            if w.get(i, j) && p.0[i] > p.0[j] {
                entries[i * d + j] = 1;
            }
        }
    }
    Ok(DagAdjacency::from_entries_unchecked(d, entries))
}

fn check_dims(w: &EdgeMask, p: &NodePotentials) -> Result<usize> {
    if w.d() != p.d() {
        return Err(Error::Dimension(format!(
            "mask is {0}x{0} but p has {1} entries",
            w.d(),
            p.d()
        )));
    }
    Ok(p.d())
}

/// Ranking permutation: the smallest potential gets rank 1, the largest rank
/// `d`, which maximizes `pᵀ(σ o)`.
pub fn sort_permutation(p: &NodePotentials) -> Result<Permutation> {
    p.check_distinct()?;
    let d = p.d();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| p.0[a].total_cmp(&p.0[b]));
    let mut ranks = vec![0; d];
    for (rank, &node) in idx.iter().enumerate() {
        ranks[node] = rank;
    }
    Ok(Permutation { ranks })
}

/// `G = W ⊙ (σ L σᵀ)`, evaluated as a matrix product.
pub fn assemble_permutation_form(
    w: &EdgeMask,
    sigma: &Permutation,
    consts: &RelaxationConstants,
) -> Result<DagAdjacency> {
    let d = w.d();
    if sigma.d() != d || consts.d != d {
        return Err(Error::Dimension(format!(
            "mask d={d}, permutation d={}, constants d={}",
            sigma.d(),
            consts.d
        )));
    }
    let s = sigma.to_matrix();
    let a = s.dot(&consts.lower_triangular()).dot(&s.t());
    let mut entries = vec![0u8; d * d];
    for i in 0..d {
        for j in 0..d {
            if w.get(i, j) && a[[i, j]] > 0.5 {
                entries[i * d + j] = 1;
            }
        }
    }
    DagAdjacency::from_entries(d, entries)
        .map_err(|e| Error::Contract(format!("permutation form is not acyclic: {e}")))
}

/// Hard and relaxed ranking permutations of `p`.
#[derive(Clone, Debug)]
pub struct RelaxedPermutation {
    pub hard: Permutation,
    pub soft: TransportPlan,
    pub tape: SinkhornTape,
}

/// `soft = sinkhorn(p oᵀ / t)` and `hard` = Hungarian rounding of `soft`.
///
/// Rounding maximizes `Σ log S(i, π(i))`. Since `log S` differs from
/// `p oᵀ / t` only by row and column offsets, this is the ranking
/// permutation whenever `p` has no ties, regardless of how far Sinkhorn got.
/// Non-convergence is logged and flagged on the plan.
pub fn relaxed_permutation(
    p: &NodePotentials,
    consts: &RelaxationConstants,
) -> Result<RelaxedPermutation> {
    if p.d() != consts.d {
        return Err(Error::Dimension(format!(
            "p has {} entries, constants d={}",
            p.d(),
            consts.d
        )));
    }
    p.check_distinct()?;
    let o = consts.order_vector();
    let m = Array2::from_shape_fn((consts.d, consts.d), |(i, k)| p.0[i] * o[k]);
    let (soft, tape) =
        sinkhorn_with_tape(m.view(), consts.temperature, consts.max_iters, consts.tol)?;
    if !soft.converged {
        log::warn!(
            "sinkhorn stopped after {} iterations with marginal error {:.3e}",
            soft.iterations_used,
            soft.max_marginal_error()
        );
    }
    let hard = hungarian(soft.log_s.view());
    Ok(RelaxedPermutation { hard, soft, tape })
}

/// Which orientation matrix feeds the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// `σ L σᵀ` from the rounded permutation (straight-through).
    Hard,
    /// `S L Sᵀ` from the Sinkhorn plan; forward and backward agree.
    Soft,
}

/// Order matrix `A` with `A(i, j) ≈ 1[p_i > p_j]` and the machinery to pull a
/// gradient on `A` back to `p` through the Sinkhorn plan.
#[derive(Clone, Debug)]
pub struct Orientation {
    /// Matrix used by the forward pass.
    pub forward: Array2<f64>,
    pub relaxed: RelaxedPermutation,
    l: Array2<f64>,
    o: Array1<f64>,
}

impl Orientation {
    pub fn new(
        p: &NodePotentials,
        consts: &RelaxationConstants,
        mode: ForwardMode,
    ) -> Result<Self> {
        let relaxed = relaxed_permutation(p, consts)?;
        let l = consts.lower_triangular();
        let forward = match mode {
            ForwardMode::Hard => {
                let s = relaxed.hard.to_matrix();
                s.dot(&l).dot(&s.t())
            }
            ForwardMode::Soft => relaxed.soft.s.dot(&l).dot(&relaxed.soft.s.t()),
        };
        Ok(Orientation {
            forward,
            relaxed,
            l,
            o: consts.order_vector(),
        })
    }

    /// Gradient with respect to `p` of a loss with gradient `grad_a` on the
    /// orientation matrix, routed through `A_soft = S L Sᵀ`.
    pub fn backward(&self, grad_a: ArrayView2<f64>) -> Array1<f64> {
        let s = &self.relaxed.soft.s;
        let grad_s = grad_a.dot(s).dot(&self.l.t()) + grad_a.t().dot(s).dot(&self.l);
        let grad_m = self.relaxed.tape.backward(grad_s.view());
        grad_m.dot(&self.o)
    }
}
