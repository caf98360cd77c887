//! Batch and layer normalization.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Mode, StatUpdate, Var};
use crate::tensor::{split_at_axis, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Stored statistics of a batch-norm layer.
pub struct RunningStats<'a> {
    pub prefix: &'a str,
    pub mean: &'a [f64],
    pub var: &'a [f64],
}

impl Graph {
    /// Normalizes each index of `axis` over all other axes, then applies
    /// `gamma * x_hat + beta`. Train mode uses batch statistics and records
    /// them for the running averages; eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Var,
        beta: Var,
        stats: Option<RunningStats<'_>>,
        eps: f64,
    ) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config("batch norm eps must be > 0".into()));
        }
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, ch, inner) = split_at_axis(&shape, axis);
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::Dimension(format!(
                "batch norm affine params must have shape [{ch}]"
            )));
        }
        let m = outer * inner;
        let train = self.mode() == Mode::Train;
        let (mean, var) = if train {
            if m == 0 {
                return Err(Error::Length("batch norm over empty batch".into()));
            }
            let xd = self.value(x).data();
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    mean[c] += xd[base..base + inner].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    var[c] += xd[base..base + inner]
                        .iter()
                        .map(|v| (v - mean[c]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            if let Some(s) = &stats {
                let unbiased = if m > 1 {
                    m as f64 / (m - 1) as f64
                } else {
                    1.0
                };
                self.record_stats(StatUpdate {
                    prefix: s.prefix.to_string(),
                    mean: mean.clone(),
                    var: var.iter().map(|v| v * unbiased).collect(),
                });
            }
            (mean, var)
        } else {
            let s = stats.ok_or_else(|| {
                Error::Config("eval-mode batch norm requires running statistics".into())
            })?;
            if s.mean.len() != ch || s.var.len() != ch {
                return Err(Error::Dimension(
                    "running statistics length mismatch".into(),
                ));
            }
            (s.mean.to_vec(), s.var.to_vec())
        };
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    out[i] = gd[c] * (xd[i] - mean[c]) * inv[c] + bd[c];
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let gam = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let mut gx = vec![0.0; xd.len()];
                let mut ggam = vec![0.0; ch];
                let mut gbeta = vec![0.0; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for i in base..base + inner {
                            let xh = (xd[i] - mean[c]) * inv[c];
                            ggam[c] += g[i] * xh;
                            gbeta[c] += g[i];
                        }
                    }
                }
                let mf = m as f64;
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        let scale = gam[c] * inv[c];
                        for i in base..base + inner {
                            gx[i] = if train {
                                let xh = (xd[i] - mean[c]) * inv[c];
                                scale * (g[i] - gbeta[c] / mf - xh * ggam[c] / mf)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape(), gx).unwrap()),
                    Some(Tensor::new(&[ch], ggam).unwrap()),
                    Some(Tensor::new(&[ch], gbeta).unwrap()),
                ]
            }),
        ))
    }

    /// Batch norm followed by ELU.
    pub fn bn_elu(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Var,
        beta: Var,
        stats: Option<RunningStats<'_>>,
        eps: f64,
    ) -> Result<Var> {
        let y = self.batch_norm(x, axis, gamma, beta, stats, eps)?;
        Ok(self.elu(y))
    }

    /// Normalizes across `axis` separately for every other index and scales by
    /// a per-index gain (no shift).
    pub fn layer_norm(&mut self, x: Var, axis: usize, gain: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, ch, inner) = split_at_axis(&shape, axis);
        if self.shape(gain) != [ch] {
            return Err(Error::Dimension(format!(
                "layer norm gain must have shape [{ch}]"
            )));
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let mut stats = Vec::with_capacity(outer * inner);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |c: usize| (o * ch + c) * inner + i;
                let mean = (0..ch).map(|c| xd[idx(c)]).sum::<f64>() / ch as f64;
                let var = (0..ch).map(|c| (xd[idx(c)] - mean).powi(2)).sum::<f64>() / ch as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for c in 0..ch {
                    out[idx(c)] = gd[c] * (xd[idx(c)] - mean) * inv;
                }
                stats.push((mean, inv));
            }
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            &[x, gain],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let gd = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let mut gx = vec![0.0; xd.len()];
                let mut ggain = vec![0.0; ch];
                let n = ch as f64;
                for o in 0..outer {
                    for i in 0..inner {
                        let (mean, inv) = stats[o * inner + i];
                        let idx = |c: usize| (o * ch + c) * inner + i;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..ch {
                            let xh = (xd[idx(c)] - mean) * inv;
                            let gh = g[idx(c)] * gd[c];
                            ggain[c] += g[idx(c)] * xh;
                            s1 += gh;
                            s2 += gh * xh;
                        }
                        for c in 0..ch {
                            let xh = (xd[idx(c)] - mean) * inv;
                            let gh = g[idx(c)] * gd[c];
                            gx[idx(c)] = inv * (gh - s1 / n - xh * s2 / n);
                        }
                    }
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape(), gx).unwrap()),
                    Some(Tensor::new(&[ch], ggain).unwrap()),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::elu;

    fn bn_train(x: Tensor, gamma: f64, beta: f64) -> Tensor {
        let ch = x.dim(1);
        let mut g = Graph::new(Mode::Train);
        let xv = g.constant(x);
        let gm = g.constant(Tensor::full(&[ch], gamma));
        let bt = g.constant(Tensor::full(&[ch], beta));
        let y = g.bn_elu(xv, 1, gm, bt, None, BN_EPS).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn constant_channel_maps_to_elu_beta() {
        let y = bn_train(Tensor::full(&[2, 3, 4], 7.5), 1.0, -0.3);
        for v in y.data() {
            assert!((v - elu(-0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn standardized_input_passes_through_to_elu() {
        // per channel: values {-1, 1} have mean 0 and variance 1
        let x = Tensor::from_fn(&[1, 2, 4], |i| if i % 2 == 0 { -1.0 } else { 1.0 });
        let y = bn_train(x.clone(), 1.0, 0.0);
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - elu(b * s)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_stays_finite() {
        let y = bn_train(Tensor::zeros(&[1, 3, 5]), 1.0, 0.0);
        assert!(y.all_finite());
    }

    #[test]
    fn eval_mode_needs_stats() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::zeros(&[1, 2, 3]));
        let gm = g.constant(Tensor::full(&[2], 1.0));
        let bt = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            g.batch_norm(x, 1, gm, bt, None, BN_EPS),
            Err(Error::Config(_))
        ));
        let y = g
            .batch_norm(
                x,
                1,
                gm,
                bt,
                Some(RunningStats {
                    prefix: "bn",
                    mean: &[1.0, -1.0],
                    var: &[3.0, 1.0],
                }),
                BN_EPS,
            )
            .unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0 / (3.0 + BN_EPS).sqrt()).abs() < 1e-15);
        assert!((v[3] - 1.0 / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn train_mode_records_unbiased_variance() {
        let mut g = Graph::new(Mode::Train);
        let x = g.constant(Tensor::new(&[1, 1, 2], vec![0.0, 2.0]).unwrap());
        let gm = g.constant(Tensor::full(&[1], 1.0));
        let bt = g.constant(Tensor::zeros(&[1]));
        g.batch_norm(
            x,
            1,
            gm,
            bt,
            Some(RunningStats {
                prefix: "p",
                mean: &[0.0],
                var: &[1.0],
            }),
            BN_EPS,
        )
        .unwrap();
        let u = &g.stat_updates()[0];
        assert_eq!(u.mean, vec![1.0]);
        assert_eq!(u.var, vec![2.0]);
    }
}
