//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Mode, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Entries whose gradient is below this fraction of the input's largest
/// gradient are compared on that scale rather than on their own magnitude.
const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckResult {
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
}

/// Compares the reverse-mode gradient of a scalar closure against the
/// five-point central difference (error `O(h^4)`), entry by entry, for every
/// input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckResult>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(Mode::Train);
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::Dimension(
                "grad_check closure must return a scalar".into(),
            ));
        }
        let x = v.data()[0];
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("closure produced {x}")));
        }
        Ok(x)
    };

    let mut g = Graph::new(Mode::Train);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        let mut numeric = vec![0.0; analytic.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = work[idx].data()[e];
            let mut at = |d: f64| -> Result<f64> {
                work[idx].data_mut()[e] = orig + d;
                eval(&work)
            };
            let (f2, f1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
            work[idx].data_mut()[e] = orig;
            *slot = (m2 - 8.0 * m1 + 8.0 * f1 - f2) / (12.0 * h);
        }
        let scale = analytic
            .data()
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (SCALE_FLOOR * scale).max(1e-12);
        let err = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max);
        per_input.push(err);
    }
    Ok(GradCheckResult {
        max_rel_err: per_input.iter().cloned().fold(0.0, f64::max),
        per_input,
    })
}
