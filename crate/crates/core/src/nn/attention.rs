//! Softmax attention (full or block-local) and ELU+1 linearized attention.
//!
//! Shapes: `q, k: (N, L, d)`, `v: (N, L, dv)`, output `(N, L, dv)`, where
//! `N` folds batch and heads.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::ops::{elu, elu_grad};
use crate::tensor::Tensor;

pub const ATTENTION_EPS: f64 = 1e-8;

/// Attention hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub chunk_size: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn validate(&self, model_dim: usize) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be >= 1".into()));
        }
        if self.heads == 0 || !model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide model dimension {model_dim}",
                self.heads
            )));
        }
        Ok(())
    }
}

fn check_qkv(g: &Graph, q: Var, k: Var, v: Var) -> Result<(usize, usize, usize, usize)> {
    let (sq, sk, sv) = (g.shape(q), g.shape(k), g.shape(v));
    if sq.len() != 3 || sq != sk || sv.len() != 3 || sv[..2] != sq[..2] {
        return Err(Error::Dimension(format!(
            "attention shapes q {sq:?}, k {sk:?}, v {sv:?} are inconsistent"
        )));
    }
    if sq[1] == 0 {
        return Err(Error::Length("attention over an empty sequence".into()));
    }
    Ok((sq[0], sq[1], sq[2], sv[2]))
}

/// Row-stochastic weights of query `i` against keys `[j0, j1)`.
fn softmax_row(
    q: &[f64],
    k: &[f64],
    d: usize,
    i: usize,
    j0: usize,
    j1: usize,
    scale: f64,
) -> Vec<f64> {
    let qi = &q[i * d..(i + 1) * d];
    let mut w: Vec<f64> = (j0..j1)
        .map(|j| {
            qi.iter()
                .zip(&k[j * d..(j + 1) * d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale
        })
        .collect();
    let mx = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in w.iter_mut() {
        *x = (*x - mx).exp();
        z += *x;
    }
    w.iter_mut().for_each(|x| *x /= z);
    w
}

impl Graph {
    /// Scaled dot-product attention restricted to non-overlapping blocks of
    /// `chunk` positions (`None` = one block spanning the sequence).
    pub fn softmax_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        chunk: Option<usize>,
    ) -> Result<Var> {
        let (n, l, d, dv) = check_qkv(self, q, k, v)?;
        let chunk = chunk.unwrap_or(l).clamp(1, l);
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut out = vec![0.0; n * l * dv];
        for b in 0..n {
            let (qb, kb) = (
                &qd[b * l * d..(b + 1) * l * d],
                &kd[b * l * d..(b + 1) * l * d],
            );
            let vb = &vd[b * l * dv..(b + 1) * l * dv];
            for c0 in (0..l).step_by(chunk) {
                let c1 = (c0 + chunk).min(l);
                for i in c0..c1 {
                    let w = softmax_row(qb, kb, d, i, c0, c1, scale);
                    let o = &mut out[(b * l + i) * dv..(b * l + i + 1) * dv];
                    for (j, wj) in (c0..c1).zip(&w) {
                        for (ov, vv) in o.iter_mut().zip(&vb[j * dv..(j + 1) * dv]) {
                            *ov += wj * vv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[n, l, dv], out)?;
        Ok(self.push(
            out,
            &[q, k, v],
            Box::new(move |ctx| {
                let (qd, kd, vd) = (
                    ctx.inputs[0].data(),
                    ctx.inputs[1].data(),
                    ctx.inputs[2].data(),
                );
                let g = ctx.grad.data();
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                for b in 0..n {
                    let qo = b * l * d;
                    let vo = b * l * dv;
                    for c0 in (0..l).step_by(chunk) {
                        let c1 = (c0 + chunk).min(l);
                        for i in c0..c1 {
                            let w = softmax_row(
                                &qd[qo..qo + l * d],
                                &kd[qo..qo + l * d],
                                d,
                                i,
                                c0,
                                c1,
                                scale,
                            );
                            let gi = &g[vo + i * dv..vo + (i + 1) * dv];
                            let dp: Vec<f64> = (c0..c1)
                                .map(|j| {
                                    gi.iter()
                                        .zip(&vd[vo + j * dv..vo + (j + 1) * dv])
                                        .map(|(a, b)| a * b)
                                        .sum()
                                })
                                .collect();
                            let mean_dp: f64 = w.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for (jj, j) in (c0..c1).enumerate() {
                                for (x, y) in gv[vo + j * dv..vo + (j + 1) * dv].iter_mut().zip(gi)
                                {
                                    *x += w[jj] * y;
                                }
                                let ds = w[jj] * (dp[jj] - mean_dp) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for e in 0..d {
                                    gq[qo + i * d + e] += ds * kd[qo + j * d + e];
                                    gk[qo + j * d + e] += ds * qd[qo + i * d + e];
                                }
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape(), gq).unwrap()),
                    Some(Tensor::new(ctx.inputs[1].shape(), gk).unwrap()),
                    Some(Tensor::new(ctx.inputs[2].shape(), gv).unwrap()),
                ]
            }),
        ))
    }

    /// Global linearized attention with feature map `elu(x) + 1`, evaluated in
    /// O(L) via the running key-value summary.
    pub fn linear_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (n, l, d, dv) = check_qkv(self, q, k, v)?;
        let phi = |x: f64| elu(x) + 1.0;
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut out = vec![0.0; n * l * dv];
        for b in 0..n {
            let (kv, z) = kv_summary(
                &kd[b * l * d..(b + 1) * l * d],
                &vd[b * l * dv..(b + 1) * l * dv],
                l,
                d,
                dv,
            );
            for i in 0..l {
                let a: Vec<f64> = qd[(b * l + i) * d..(b * l + i + 1) * d]
                    .iter()
                    .map(|&x| phi(x))
                    .collect();
                let den = a
                    .iter()
                    .zip(&z)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .max(ATTENTION_EPS);
                let o = &mut out[(b * l + i) * dv..(b * l + i + 1) * dv];
                for (e, ae) in a.iter().enumerate() {
                    for (ov, s) in o.iter_mut().zip(&kv[e * dv..(e + 1) * dv]) {
                        *ov += ae * s;
                    }
                }
                o.iter_mut().for_each(|x| *x /= den);
            }
        }
        let out = Tensor::new(&[n, l, dv], out)?;
        Ok(self.push(
            out,
            &[q, k, v],
            Box::new(move |ctx| {
                let (qd, kd, vd) = (
                    ctx.inputs[0].data(),
                    ctx.inputs[1].data(),
                    ctx.inputs[2].data(),
                );
                let od = ctx.output.data();
                let g = ctx.grad.data();
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                for b in 0..n {
                    let qo = b * l * d;
                    let vo = b * l * dv;
                    let (kv, z) = kv_summary(&kd[qo..qo + l * d], &vd[vo..vo + l * dv], l, d, dv);
                    let mut gkv = vec![0.0; d * dv];
                    let mut gz = vec![0.0; d];
                    for i in 0..l {
                        let qrow = &qd[qo + i * d..qo + (i + 1) * d];
                        let a: Vec<f64> = qrow.iter().map(|&x| elu(x) + 1.0).collect();
                        let raw = a.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>();
                        let den = raw.max(ATTENTION_EPS);
                        let gi = &g[vo + i * dv..vo + (i + 1) * dv];
                        let oi = &od[vo + i * dv..vo + (i + 1) * dv];
                        // d out / d numerator = 1/den; d out / d den = -out/den
                        let gnum: Vec<f64> = gi.iter().map(|x| x / den).collect();
                        let gden = if raw > ATTENTION_EPS {
                            -gi.iter().zip(oi).map(|(x, y)| x * y).sum::<f64>() / den
                        } else {
                            0.0
                        };
                        for e in 0..d {
                            let kvrow = &kv[e * dv..(e + 1) * dv];
                            let ga = kvrow.iter().zip(&gnum).map(|(x, y)| x * y).sum::<f64>()
                                + z[e] * gden;
                            gq[qo + i * d + e] = ga * elu_grad(qrow[e]);
                            for (x, y) in gkv[e * dv..(e + 1) * dv].iter_mut().zip(&gnum) {
                                *x += a[e] * y;
                            }
                            gz[e] += a[e] * gden;
                        }
                    }
                    for j in 0..l {
                        let krow = &kd[qo + j * d..qo + (j + 1) * d];
                        let vrow = &vd[vo + j * dv..vo + (j + 1) * dv];
                        for e in 0..d {
                            let bj = elu(krow[e]) + 1.0;
                            let gkvrow = &gkv[e * dv..(e + 1) * dv];
                            let gb =
                                gkvrow.iter().zip(vrow).map(|(x, y)| x * y).sum::<f64>() + gz[e];
                            gk[qo + j * d + e] = gb * elu_grad(krow[e]);
                            for (x, y) in gv[vo + j * dv..vo + (j + 1) * dv].iter_mut().zip(gkvrow)
                            {
                                *x += bj * y;
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape(), gq).unwrap()),
                    Some(Tensor::new(ctx.inputs[1].shape(), gk).unwrap()),
                    Some(Tensor::new(ctx.inputs[2].shape(), gv).unwrap()),
                ]
            }),
        ))
    }
}

/// `(sum_j phi(k_j) v_j^T, sum_j phi(k_j))` for one sequence.
fn kv_summary(k: &[f64], v: &[f64], l: usize, d: usize, dv: usize) -> (Vec<f64>, Vec<f64>) {
    let mut kv = vec![0.0; d * dv];
    let mut z = vec![0.0; d];
    for j in 0..l {
        let vrow = &v[j * dv..(j + 1) * dv];
        for e in 0..d {
            let b = elu(k[j * d + e]) + 1.0;
            z[e] += b;
            for (x, y) in kv[e * dv..(e + 1) * dv].iter_mut().zip(vrow) {
                *x += b * y;
            }
        }
    }
    (kv, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Mode;

    fn run(
        q: &[f64],
        k: &[f64],
        v: &[f64],
        l: usize,
        d: usize,
        dv: usize,
        linear: bool,
    ) -> Vec<f64> {
        let mut g = Graph::new(Mode::Eval);
        let q = g.constant(Tensor::new(&[1, l, d], q.to_vec()).unwrap());
        let k = g.constant(Tensor::new(&[1, l, d], k.to_vec()).unwrap());
        let v = g.constant(Tensor::new(&[1, l, dv], v.to_vec()).unwrap());
        let o = if linear {
            g.linear_attention(q, k, v).unwrap()
        } else {
            g.softmax_attention(q, k, v, None).unwrap()
        };
        g.value(o).data().to_vec()
    }

    #[test]
    fn single_key_returns_its_value() {
        for linear in [false, true] {
            let o = run(
                &[0.3, -0.2],
                &[0.3, -0.2],
                &[4.0, 5.0, 6.0],
                1,
                2,
                3,
                linear,
            );
            for (a, b) in o.iter().zip([4.0, 5.0, 6.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_query_averages_values() {
        let v = [1.0, 10.0, 3.0, 20.0, 5.0, 60.0];
        let o = run(
            &[0.0; 6],
            &[0.1, 0.2, -0.5, 0.4, 0.9, -0.3],
            &v,
            3,
            2,
            2,
            false,
        );
        for row in o.chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12);
            assert!((row[1] - 30.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_and_values() {
        let o = run(
            &[0.5, 1.0, -1.0, 2.0],
            &[0.7, 0.1, 0.7, 0.1],
            &[2.0, -1.0, 2.0, -1.0],
            2,
            2,
            2,
            false,
        );
        for row in o.chunks(2) {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_equal_keys_average_values_linear() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let o = run(
            &[0.2, -0.4, 1.0, 0.0, -2.0, 3.0],
            &[0.3, 0.6, 0.3, 0.6, 0.3, 0.6],
            &v,
            3,
            2,
            2,
            true,
        );
        for row in o.chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12);
            assert!((row[1] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_sequence_is_length_error() {
        let mut g = Graph::new(Mode::Eval);
        let q = g.constant(Tensor::zeros(&[1, 0, 2]));
        assert!(matches!(
            g.softmax_attention(q, q, q, None),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = AttentionConfig {
            chunk_size: 4,
            heads: 3,
        };
        assert!(cfg.validate(8).is_err());
        assert!(cfg.validate(9).is_ok());
    }
}
