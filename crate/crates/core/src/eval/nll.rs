use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graphs::DagAdjacency;
use crate::scm::{Dataset, ScmModel};

/// Per-point negative log posterior-predictive density
/// `-log (1/K) sum_k p(x_n | G_k, Theta_k)`.
pub fn held_out_nll_values(
    model: &ScmModel,
    members: &[(DagAdjacency, &[f64])],
    test: &Dataset,
) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::Data(
            "held-out NLL needs at least one particle".into(),
        ));
    }
    if test.d() != model.d() {
        return Err(Error::Dimension(format!(
            "test data has d={}, model has d={}",
            test.d(),
            model.d()
        )));
    }
    let k = members.len();
    let mut rows = Array2::zeros((k, test.n()));
    for (r, (g, theta)) in members.iter().enumerate() {
        let ll = model.row_log_likelihoods(test.view(), g.to_f64().view(), theta)?;
        rows.row_mut(r).assign(&ll);
    }
    let log_k = (k as f64).ln();
    Ok(rows
        .columns()
        .into_iter()
        .map(|col| {
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lme = if max.is_finite() {
                max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - log_k
            } else {
                max
            };
            -lme
        })
        .collect())
}

/// Mixture NLL averaged over test points.
pub fn held_out_nll(
    model: &ScmModel,
    members: &[(DagAdjacency, &[f64])],
    test: &Dataset,
) -> Result<f64> {
    let v = held_out_nll_values(model, members, test)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
