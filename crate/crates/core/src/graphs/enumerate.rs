use super::DagAdjacency;
use crate::error::{Error, Result};

pub const MAX_ENUMERATION_NODES: usize = 5;
pub const MAX_COUNT_NODES: usize = 8;

/// Streams every labeled DAG on `d` nodes exactly once.
///
/// Candidates are the `2^(d(d-1))` off-diagonal masks, filtered for
/// acyclicity on parent bitsets.
pub fn enumerate_dags(d: usize) -> Result<DagIter> {
    if d > MAX_ENUMERATION_NODES {
        return Err(Error::SizeLimit(format!(
            "DAG enumeration is capped at d = {MAX_ENUMERATION_NODES}, got {d}"
        )));
    }
    let positions: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    Ok(DagIter {
        d,
        end: 1u64 << positions.len(),
        positions,
        next: 0,
    })
}

pub struct DagIter {
    d: usize,
    positions: Vec<(usize, usize)>,
    next: u64,
    end: u64,
}

impl DagIter {
    fn decode_acyclic(&self, mask: u64) -> Option<DagAdjacency> {
        let d = self.d;
        let mut parents = [0u32; MAX_ENUMERATION_NODES];
        for (bit, &(i, j)) in self.positions.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                parents[j] |= 1 << i;
            }
        }
        // Peel sources until nothing remains or no source exists.
        let mut remaining: u32 = (1u32 << d) - 1;
        while remaining != 0 {
            let sources = (0..d)
                .filter(|&j| remaining >> j & 1 == 1 && parents[j] & remaining == 0)
                .fold(0u32, |acc, j| acc | 1 << j);
            if sources == 0 {
                return None;
            }
            remaining &= !sources;
        }
        let mut entries = vec![0u8; d * d];
        for (j, &ps) in parents.iter().enumerate().take(d) {
            for i in 0..d {
                if ps >> i & 1 == 1 {
                    entries[i * d + j] = 1;
                }
            }
        }
        Some(DagAdjacency::from_entries_unchecked(d, entries))
    }
}

impl Iterator for DagIter {
    type Item = DagAdjacency;

    fn next(&mut self) -> Option<DagAdjacency> {
        while self.next < self.end {
            let mask = self.next;
            self.next += 1;
            if let Some(g) = self.decode_acyclic(mask) {
                return Some(g);
            }
        }
        None
    }
}

/// Number of labeled DAGs on `d` nodes (Robinson's recurrence).
pub fn count_dags(d: usize) -> Result<u128> {
    if d > MAX_COUNT_NODES {
        return Err(Error::SizeLimit(format!(
            "DAG counting is capped at d = {MAX_COUNT_NODES}, got {d}"
        )));
    }
    let mut a = vec![1i128; d + 1];
    for n in 1..=d {
        let mut total = 0i128;
        let mut binom = 1i128;
        for k in 1..=n {
            binom = binom * (n - k + 1) as i128 / k as i128;
            let term = binom * (1i128 << (k * (n - k))) * a[n - k];
            total += if k % 2 == 1 { term } else { -term };
        }
        a[n] = total;
    }
    Ok(a[d] as u128)
}
