use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the worst relative error
/// `|analytic − numeric| / max(1, |numeric|)` over every coordinate.
///
/// `f` builds the loss on a fresh graph from parameter leaves, once for
/// the analytic pass and twice per coordinate for the numeric pass.
pub fn finite_diff_check<F>(params: &[Tensor], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!(
            "finite_diff_check: step must be positive, got {step}"
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let base = g.value(loss).item();
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "finite_diff_check: function value {base}"
        )));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor> = params
        .iter()
        .zip(&vars)
        .map(|(p, v)| {
            g.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_check: function value {v} at perturbed point"
            )));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.len() {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[pi].data()[ci] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
