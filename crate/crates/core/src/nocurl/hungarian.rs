use ndarray::ArrayView2;

use super::Permutation;

/// Maximum-profit assignment by the O(n^3) Hungarian method with
/// potentials. Row `i` is assigned column `π(i)`, returned as the permutation
/// whose rank vector (zero-based) is `π`.
pub fn hungarian(profit: ArrayView2<f64>) -> Permutation {
    let n = profit.nrows();
    assert_eq!(n, profit.ncols(), "profit matrix must be square");
    assert!(
        profit.iter().all(|v| v.is_finite()),
        "profit entries must be finite"
    );
    if n == 0 {
        return Permutation::identity(0);
    }
    let cost = |i: usize, j: usize| -profit[[i, j]];

    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = col0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Permutation::from_ranks(assignment).expect("Hungarian output is a permutation")
}

/// Objective `sum_i profit(i, π(i))` of an assignment.
pub fn assignment_value(profit: ArrayView2<f64>, perm: &Permutation) -> f64 {
    perm.ranks()
        .iter()
        .enumerate()
        .map(|(i, &k)| profit[[i, k]])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
            let n = used.len();
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            for k in 0..n {
                if !used[k] {
                    used[k] = true;
                    prefix.push(k);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[k] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    #[test]
    fn two_by_two_cases() {
        assert_eq!(
            hungarian(array![[1.0, 0.0], [0.0, 1.0]].view()).ranks(),
            &[0, 1]
        );
        assert_eq!(
            hungarian(array![[0.0, 1.0], [1.0, 0.0]].view()).ranks(),
            &[1, 0]
        );
    }

    #[test]
    fn matches_brute_force_on_random_6x6() {
        let perms = all_permutations(6);
        assert_eq!(perms.len(), 720);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..200 {
            let m = Array2::from_shape_fn((6, 6), |_| rng.random_range(-5.0..5.0));
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &k)| m[[i, k]]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            let got = assignment_value(m.view(), &hungarian(m.view()));
            assert!((got - best).abs() < 1e-9, "{got} vs {best}");
        }
    }

    #[test]
    fn beats_random_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let n = rng.random_range(2..15);
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
            let got = assignment_value(m.view(), &hungarian(m.view()));
            let mut ranks: Vec<usize> = (0..n).collect();
            for _ in 0..1000 {
                ranks.shuffle(&mut rng);
                let other = Permutation::from_ranks(ranks.clone()).unwrap();
                assert!(got >= assignment_value(m.view(), &other) - 1e-12);
            }
        }
    }
}
