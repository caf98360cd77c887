//! 1-D convolution and its transpose (bias-free).

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Conv1dSpec {
            stride: 1,
            pad_left: 0,
            pad_right: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv1dSpec {
    pub fn strided(stride: usize) -> Self {
        Conv1dSpec {
            stride,
            ..Default::default()
        }
    }

    pub fn padded(pad: usize) -> Self {
        Conv1dSpec {
            pad_left: pad,
            pad_right: pad,
            ..Default::default()
        }
    }

    /// Stride-1 padding that keeps the length; even spans put the extra
    /// sample on the right.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let span = dilation * (kernel - 1);
        Conv1dSpec {
            pad_left: span / 2,
            pad_right: span - span / 2,
            dilation,
            ..Default::default()
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::Config("stride and dilation must be >= 1".into()));
        }
        let padded = len + self.pad_left + self.pad_right;
        let span = self.dilation * (kernel.max(1) - 1) + 1;
        if kernel == 0 || span > padded {
            return Err(Error::Length(format!(
                "kernel span {span} exceeds padded length {padded}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

/// Output positions `t` for which `t*stride + off` indexes inside `[0, len)`.
fn valid_range(off: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let last = len as isize - 1 - off;
    let hi = if last < 0 {
        0
    } else {
        (last / s + 1).min(out_len as isize)
    };
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

impl Graph {
    /// `x: (B, Cin, T)`, `w: (Cout, Cin/groups, K)` -> `(B, Cout, T')`.
    pub fn conv1d(&mut self, x: Var, w: Var, spec: Conv1dSpec) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 {
            return Err(Error::Dimension(format!(
                "conv1d expects rank-3 input and kernel, got {sx:?} and {sw:?}"
            )));
        }
        let (b, cin, t) = (sx[0], sx[1], sx[2]);
        let (cout, cig, k) = (sw[0], sw[1], sw[2]);
        let groups = spec.groups.max(1);
        if cin % groups != 0 || cout % groups != 0 || cig != cin / groups {
            return Err(Error::Dimension(format!(
                "conv1d: input {sx:?} incompatible with kernel {sw:?} at {groups} groups"
            )));
        }
        let tout = spec.output_len(t, k)?;
        let cog = cout / groups;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; b * cout * tout];
        for bi in 0..b {
            for co in 0..cout {
                let grp = co / cog;
                let orow = &mut out[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                for cl in 0..cig {
                    let ci = grp * cig + cl;
                    let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                    for kk in 0..k {
                        let wv = wd[(co * cig + cl) * k + kk];
                        if wv == 0.0 {
                            continue;
                        }
                        let off = (kk * spec.dilation) as isize - spec.pad_left as isize;
                        let (lo, hi) = valid_range(off, spec.stride, t, tout);
                        if lo >= hi {
                            continue;
                        }
                        if spec.stride == 1 {
                            let start = (lo as isize + off) as usize;
                            for (o, xv) in orow[lo..hi].iter_mut().zip(&xrow[start..]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (ti, o) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                                *o +=
                                    wv * xrow[(ti as isize * spec.stride as isize + off) as usize];
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[b, cout, tout], out)?;
        Ok(self.push(
            out,
            &[x, w],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let wd = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wd.len()];
                for bi in 0..b {
                    for co in 0..cout {
                        let grp = co / cog;
                        let grow = &g[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                        for cl in 0..cig {
                            let ci = grp * cig + cl;
                            let base = (bi * cin + ci) * t;
                            for kk in 0..k {
                                let widx = (co * cig + cl) * k + kk;
                                let wv = wd[widx];
                                let off = (kk * spec.dilation) as isize - spec.pad_left as isize;
                                let (lo, hi) = valid_range(off, spec.stride, t, tout);
                                let mut acc = 0.0;
                                for (ti, gv) in grow.iter().enumerate().take(hi).skip(lo) {
                                    let xi =
                                        base + (ti as isize * spec.stride as isize + off) as usize;
                                    acc += gv * xd[xi];
                                    gx[xi] += gv * wv;
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape(), gx).unwrap()),
                    Some(Tensor::new(ctx.inputs[1].shape(), gw).unwrap()),
                ]
            }),
        ))
    }

    /// Overlap-add transposed convolution.
    /// `x: (B, Cin, S)`, `w: (Cin, Cout, K)` -> `(B, Cout, (S-1)*stride + K)`.
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[0] {
            return Err(Error::Dimension(format!(
                "conv1d_transpose: input {sx:?} incompatible with kernel {sw:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        let (b, cin, s) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[1], sw[2]);
        if s == 0 || k == 0 {
            return Err(Error::Length("empty input or kernel".into()));
        }
        let tout = (s - 1) * stride + k;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; b * cout * tout];
        for bi in 0..b {
            for ci in 0..cin {
                let xrow = &xd[(bi * cin + ci) * s..(bi * cin + ci + 1) * s];
                for co in 0..cout {
                    let orow = &mut out[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                    let wrow = &wd[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                    for (si, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        for (o, wv) in orow[si * stride..si * stride + k].iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[b, cout, tout], out)?;
        Ok(self.push(
            out,
            &[x, w],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let wd = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wd.len()];
                for bi in 0..b {
                    for ci in 0..cin {
                        for co in 0..cout {
                            let grow = &g[(bi * cout + co) * tout..(bi * cout + co + 1) * tout];
                            let wbase = (ci * cout + co) * k;
                            for si in 0..s {
                                let seg = &grow[si * stride..si * stride + k];
                                let xi = (bi * cin + ci) * s + si;
                                let xv = xd[xi];
                                let mut acc = 0.0;
                                for (kk, gv) in seg.iter().enumerate() {
                                    acc += gv * wd[wbase + kk];
                                    gw[wbase + kk] += gv * xv;
                                }
                                gx[xi] += acc;
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::new(ctx.inputs[0].shape(), gx).unwrap()),
                    Some(Tensor::new(ctx.inputs[1].shape(), gw).unwrap()),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Mode;

    fn run_conv(x: &[f64], cin: usize, w: &[f64], wshape: [usize; 3], spec: Conv1dSpec) -> Tensor {
        let mut g = Graph::new(Mode::Eval);
        let xv = g.constant(Tensor::new(&[1, cin, x.len() / cin], x.to_vec()).unwrap());
        let wv = g.constant(Tensor::new(&wshape, w.to_vec()).unwrap());
        let y = g.conv1d(xv, wv, spec).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn moving_sum() {
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let y = run_conv(&x, 1, &[1.0, 1.0], [1, 1, 2], Conv1dSpec::default());
        assert_eq!(y.data(), &[3., 5., 7., 9., 11., 13., 15.]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = [0.5, -1.0, 2.0, 4.0];
        let y = run_conv(&x, 1, &[1.0], [1, 1, 1], Conv1dSpec::default());
        assert_eq!(y.data(), &x);
    }

    #[test]
    fn encoder_length_formula() {
        let spec = Conv1dSpec::strided(10);
        assert_eq!(spec.output_len(1020, 20).unwrap(), 101);
        assert!(matches!(spec.output_len(10, 20), Err(Error::Length(_))));
    }

    #[test]
    fn same_padding_keeps_length_and_dilation_offsets() {
        let x: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let spec = Conv1dSpec::same(3, 2);
        // taps at t-2, t, t+2
        let y = run_conv(&x, 1, &[1.0, 0.0, 0.0], [1, 1, 3], spec);
        assert_eq!(y.len(), 10);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[5], x[3]);
    }

    #[test]
    fn depthwise_groups_do_not_mix_channels() {
        let x = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let y = run_conv(
            &x,
            2,
            &[1.0, 2.0],
            [2, 1, 1],
            Conv1dSpec {
                groups: 2,
                ..Default::default()
            },
        );
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 20.0, 40.0, 60.0]);
    }

    #[test]
    fn transpose_length_and_identity() {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::zeros(&[1, 3, 101]));
        let w = g.constant(Tensor::zeros(&[3, 1, 20]));
        let y = g.conv1d_transpose(x, w, 10).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1020]);

        let x = g.constant(Tensor::new(&[1, 1, 3], vec![1.0, -2.0, 3.0]).unwrap());
        let w = g.constant(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv1d_transpose(x, w, 1).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn padding_wider_than_signal() {
        // taps that only ever see padding contribute nothing
        let y = run_conv(
            &[1.0, 2.0],
            1,
            &[1.0, 1.0, 1.0, 1.0, 1.0],
            [1, 1, 5],
            Conv1dSpec::padded(4),
        );
        assert_eq!(y.data(), &[1.0, 3.0, 3.0, 3.0, 3.0, 2.0]);
    }
}
