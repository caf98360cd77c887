//! Scale-invariant signal-to-distortion ratio and its negative as a loss.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::tensor::Tensor;

/// Reported values are clamped to `[-CAP, CAP]` dB.
pub const SI_SDR_CAP_DB: f64 = 60.0;
/// Added to both energies inside the loss.
pub const LOSS_EPS: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Length(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let ss = dot(reference, reference);
    if ss == 0.0 {
        return Err(Error::UndefinedReference(
            "reference signal is all zeros".into(),
        ));
    }
    Ok(ss)
}

/// `10 log10(|a s|^2 / |a s - est|^2)` with `a = <est, s> / |s|^2`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let ss = check(est, reference)?;
    let alpha = dot(est, reference) / ss;
    let target: f64 = reference.iter().map(|s| (alpha * s).powi(2)).sum();
    let resid: f64 = reference
        .iter()
        .zip(est)
        .map(|(s, e)| (alpha * s - e).powi(2))
        .sum();
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    if resid == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / resid).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Negative SI-SDR (uncapped, `LOSS_EPS`-smoothed) of one row.
fn row_loss(est: &[f64], reference: &[f64], ss: f64) -> (f64, Vec<f64>) {
    let alpha = dot(est, reference) / ss;
    let e: Vec<f64> = reference
        .iter()
        .zip(est)
        .map(|(s, x)| alpha * s - x)
        .collect();
    let t = alpha * alpha * ss;
    let r = dot(&e, &e);
    let loss = -10.0 * ((t + LOSS_EPS) / (r + LOSS_EPS)).log10();
    let c = -10.0 / LN_10;
    let grad = reference
        .iter()
        .zip(&e)
        .map(|(s, ei)| c * (2.0 * alpha * s / (t + LOSS_EPS) + 2.0 * ei / (r + LOSS_EPS)))
        .collect();
    (loss, grad)
}

/// Mean negative SI-SDR over the batch. `est` and `reference` share a shape
/// whose leading axis is the batch; remaining axes are flattened.
pub fn si_sdr_loss(g: &mut Graph, est: Var, reference: &Tensor) -> Result<Var> {
    let shape = g.shape(est).to_vec();
    if shape != reference.shape() || shape.is_empty() {
        return Err(Error::Dimension(format!(
            "estimate {shape:?} vs reference {:?}",
            reference.shape()
        )));
    }
    let b = shape[0];
    let n = reference.len() / b.max(1);
    let refs: Vec<Vec<f64>> = reference.data().chunks(n).map(|c| c.to_vec()).collect();
    let mut energies = Vec::with_capacity(b);
    for row in &refs {
        energies.push(check(row, row)?);
    }
    let ed = g.value(est).data();
    let mut total = 0.0;
    for (i, row) in refs.iter().enumerate() {
        total += row_loss(&ed[i * n..(i + 1) * n], row, energies[i]).0;
    }
    let out = Tensor::scalar(total / b as f64);
    Ok(g.push(
        out,
        &[est],
        Box::new(move |ctx| {
            let ed = ctx.inputs[0].data();
            let scale = ctx.grad.data()[0] / b as f64;
            let mut grad = Vec::with_capacity(ed.len());
            for (i, row) in refs.iter().enumerate() {
                let (_, gr) = row_loss(&ed[i * n..(i + 1) * n], row, energies[i]);
                grad.extend(gr.into_iter().map(|v| v * scale));
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape(), grad).unwrap())]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Mode, DEFAULT_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_case_is_zero_db() {
        assert!(si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn perfect_hits_cap_and_zero_reference_errors() {
        let s = [0.3, -0.2, 0.9];
        assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CAP_DB);
        assert!(matches!(
            si_sdr(&s, &[0.0; 3]),
            Err(Error::UndefinedReference(_))
        ));
        assert_eq!(si_sdr(&[0.0; 3], &s).unwrap(), -SI_SDR_CAP_DB);
    }

    #[test]
    fn loss_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Tensor::from_fn(&[2, 64], |_| rng.gen_range(-1.0..1.0));
        let est = Tensor::from_fn(&[2, 64], |_| rng.gen_range(-1.0..1.0));
        let r = grad_check(|g, v| si_sdr_loss(g, v[0], &s), &[est], DEFAULT_STEP).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn loss_matches_metric_away_from_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e: Vec<f64> = s.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        let mut g = Graph::new(Mode::Eval);
        let ev = g.constant(Tensor::new(&[1, 50], e.clone()).unwrap());
        let l = si_sdr_loss(&mut g, ev, &Tensor::new(&[1, 50], s.clone()).unwrap()).unwrap();
        assert!((g.value(l).data()[0] + si_sdr(&e, &s).unwrap()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let base = si_sdr(&e, &s).unwrap();
            for a in [0.1, 1.0, 10.0] {
                let scaled: Vec<f64> = e.iter().map(|v| v * a).collect();
                prop_assert!((si_sdr(&scaled, &s).unwrap() - base).abs() < 1e-6);
            }
        }
    }
}
