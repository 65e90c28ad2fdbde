use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Result of Sinkhorn normalization.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// Approximately doubly stochastic plan `S`.
    pub s: Array2<f64>,
    /// Log of `s`, kept because rounding is done in log space.
    pub log_s: Array2<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl TransportPlan {
    pub fn max_marginal_error(&self) -> f64 {
        marginal_error(self.s.view())
    }
}

/// Iterates recorded during a Sinkhorn run, enough to differentiate through
/// the executed row/column normalizations.
#[derive(Clone, Debug)]
pub struct SinkhornTape {
    temperature: f64,
    /// `log_iterates[k]` is the log-matrix entering iteration `k`; the last entry
    /// is the output log-plan.
    log_iterates: Vec<Array2<f64>>,
}

pub(crate) fn marginal_error(s: ArrayView2<f64>) -> f64 {
    let rows = s.sum_axis(Axis(1));
    let cols = s.sum_axis(Axis(0));
    rows.iter()
        .chain(cols.iter())
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| v - lse);
    }
}

fn normalize_cols(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let lse = log_sum_exp(col.iter().copied());
        col.mapv_inplace(|v| v - lse);
    }
}

fn run(
    m: ArrayView2<f64>,
    temperature: f64,
    max_iters: usize,
    tol: f64,
    record: bool,
) -> Result<(TransportPlan, Vec<Array2<f64>>)> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::Dimension(format!("sinkhorn input is {r}x{c}")));
    }
    if !(temperature > 0.0) || !(tol > 0.0) {
        return Err(Error::Config(format!(
            "sinkhorn needs t > 0 and tol > 0 (t = {temperature}, tol = {tol})"
        )));
    }
    if max_iters == 0 {
        return Err(Error::Config("sinkhorn needs max_iters >= 1".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "sinkhorn input has non-finite entries".into(),
        ));
    }
    let mut x = m.mapv(|v| v / temperature);
    let mut tape = Vec::new();
    let mut iterations_used = 0;
    let mut converged = false;
    while iterations_used < max_iters {
        if record {
            tape.push(x.clone());
        }
        normalize_rows(&mut x);
        normalize_cols(&mut x);
        iterations_used += 1;
        if marginal_error(x.mapv(f64::exp).view()) <= tol {
            converged = true;
            break;
        }
    }
    if record {
        tape.push(x.clone());
    }
    let s = x.mapv(f64::exp);
    Ok((
        TransportPlan {
            s,
            log_s: x,
            iterations_used,
            converged,
        },
        tape,
    ))
}

/// Log-domain Sinkhorn normalization of `exp(m / t)`.
///
/// One iteration is a row normalization followed by a column normalization.
/// Stops once every row and column sum is within `tol` of one, or after
/// `max_iters` iterations with `converged = false`.
pub fn sinkhorn(m: ArrayView2<f64>, t: f64, max_iters: usize, tol: f64) -> Result<TransportPlan> {
    run(m, t, max_iters, tol, false).map(|(plan, _)| plan)
}

/// Like [`sinkhorn`], also returning the tape needed for
/// [`SinkhornTape::backward`].
pub fn sinkhorn_with_tape(
    m: ArrayView2<f64>,
    t: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(TransportPlan, SinkhornTape)> {
    let (plan, log_iterates) = run(m, t, max_iters, tol, true)?;
    Ok((
        plan,
        SinkhornTape {
            temperature: t,
            log_iterates,
        },
    ))
}

impl SinkhornTape {
    /// Pulls a gradient with respect to `S` back to the input matrix `m`
    /// through the exact sequence of normalizations that was executed.
    pub fn backward(&self, grad_s: ArrayView2<f64>) -> Array2<f64> {
        let last = self.log_iterates.last().expect("tape holds the output");
        // d/dX of exp(X).
        let mut grad = &grad_s * &last.mapv(f64::exp);
        for input in self.log_iterates[..self.log_iterates.len() - 1]
            .iter()
            .rev()
        {
            let mut rows = input.clone();
            normalize_rows(&mut rows);
            let mut cols = rows.clone();
            normalize_cols(&mut cols);
            // Column normalization: dY = dX - softmax_col(Y) * colsum(dX).
            let col_sums = grad.sum_axis(Axis(0));
            Zip::from(grad.columns_mut())
                .and(cols.columns())
                .and(&col_sums)
                .for_each(|mut g, x, &s| {
                    Zip::from(&mut g)
                        .and(&x)
                        .for_each(|gv, &xv| *gv -= xv.exp() * s);
                });
            // Row normalization: dX = dY - softmax_row(X) * rowsum(dY).
            let row_sums = grad.sum_axis(Axis(1));
            Zip::from(grad.rows_mut())
                .and(rows.rows())
                .and(&row_sums)
                .for_each(|mut g, y, &s| {
                    Zip::from(&mut g)
                        .and(&y)
                        .for_each(|gv, &yv| *gv -= yv.exp() * s);
                });
        }
        grad / self.temperature
    }

    pub fn iterations(&self) -> usize {
        self.log_iterates.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_matrix_is_uniform_after_one_iteration() {
        let plan = sinkhorn(Array2::zeros((2, 2)).view(), 1.0, 100, 1e-3).unwrap();
        assert_eq!(plan.iterations_used, 1);
        assert!(plan.converged);
        for v in plan.s.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_input_approaches_assignment() {
        let p = [10.0, -10.0];
        let o = [1.0, 2.0];
        let m = Array2::from_shape_fn((2, 2), |(i, k)| p[i] * o[k]);
        let plan = sinkhorn(m.view(), 0.2, 3000, 1e-3).unwrap();
        // Brute-force argmax over the two 2x2 permutations.
        let identity = m[[0, 0]] + m[[1, 1]];
        let swap = m[[0, 1]] + m[[1, 0]];
        let expected = if identity > swap {
            array![[1.0, 0.0], [0.0, 1.0]]
        } else {
            array![[0.0, 1.0], [1.0, 0.0]]
        };
        assert_eq!(expected, array![[0.0, 1.0], [1.0, 0.0]]);
        for (a, b) in plan.s.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn converged_plans_meet_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = rng.random_range(2..12);
            let m = Array2::from_shape_fn((d, d), |_| rng.random_range(-3.0..3.0));
            let plan = sinkhorn(m.view(), 0.5, 3000, 1e-3).unwrap();
            if plan.converged {
                assert!(plan.max_marginal_error() <= 1e-3);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = array![[0.0, f64::NAN], [0.0, 0.0]];
        assert!(matches!(
            sinkhorn(m.view(), 1.0, 10, 1e-3),
            Err(Error::Numeric(_))
        ));
        let m = Array2::<f64>::zeros((2, 2));
        assert!(sinkhorn(m.view(), 0.0, 10, 1e-3).is_err());
        assert!(sinkhorn(m.view(), 1.0, 10, 0.0).is_err());
    }

    #[test]
    fn unrolled_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = rng.random_range(2..6);
            let m = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
            let weights = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
            // Fixed iteration count keeps the map smooth in m.
            let loss = |m: &Array2<f64>| {
                let plan = sinkhorn(m.view(), 0.7, 15, 1e-300).unwrap();
                (&plan.s * &weights).sum() + plan.s.mapv(|v| v * v).sum()
            };
            let (plan, tape) = sinkhorn_with_tape(m.view(), 0.7, 15, 1e-300).unwrap();
            let grad_s = &weights + &(plan.s.mapv(|v| 2.0 * v));
            let analytic = tape.backward(grad_s.view());
            let h = 1e-6;
            for i in 0..d {
                for j in 0..d {
                    let mut up = m.clone();
                    up[[i, j]] += h;
                    let mut dn = m.clone();
                    dn[[i, j]] -= h;
                    let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                    let err = (fd - analytic[[i, j]]).abs() / fd.abs().max(1e-3);
                    assert!(err < 1e-5, "fd {fd} vs analytic {}", analytic[[i, j]]);
                }
            }
        }
    }
}
