//! Elementwise, reduction and layout ops.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::tensor::{inverse_permutation, split_at_axis, Tensor};

fn same_shape(g: &Graph, a: Var, b: Var, op: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.scale(-1.0))]),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                let ga = Tensor::from_fn(a.shape(), |i| ctx.grad.data()[i] * b.data()[i]);
                let gb = Tensor::from_fn(b.shape(), |i| ctx.grad.data()[i] * a.data()[i]);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(
            out,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.scale(c))]),
        )
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value(a).map(f);
        self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let y = ctx.output.data();
                let g = Tensor::from_fn(ctx.grad.shape(), |i| ctx.grad.data()[i] * df(x[i], y[i]));
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, elu, |x, _| elu_grad(x))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(Tensor::full(
                    ctx.inputs[0].shape(),
                    ctx.grad.data()[0],
                ))]
            }),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(|ctx| {
                let g = ctx
                    .grad
                    .clone()
                    .reshape(ctx.inputs[0].shape())
                    .expect("same size");
                vec![Some(g)]
            }),
        ))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let inv = inverse_permutation(axes);
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.permute(&inv).expect("valid inverse"))]),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(
                *parts
                    .first()
                    .ok_or_else(|| Error::Dimension("concat of nothing".into()))?,
            )
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension(format!("concat axis {axis} out of range")));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::Dimension(format!(
                    "concat: {:?} incompatible with {first:?} on axis {axis}",
                    s
                )));
            }
            widths.push(s[axis]);
        }
        let total: usize = widths.iter().sum();
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut shape = first.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            parts,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads: Vec<Vec<f64>> = widths
                    .iter()
                    .map(|w| Vec::with_capacity(outer * w * inner))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gp, &w) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&g[pos..pos + w * inner]);
                        pos += w * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&ctx.inputs)
                    .map(|(d, inp)| Some(Tensor::new(inp.shape(), d).expect("sizes match")))
                    .collect()
            }),
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice [{start}, {}) out of range for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, w, inner) = split_at_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * w + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(&shape);
                let gd = g.data_mut();
                let src = ctx.grad.data();
                for o in 0..outer {
                    let base = (o * w + start) * inner;
                    gd[base..base + len * inner]
                        .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Repeats each leading-axis block `reps` times: row `i` becomes rows
    /// `i*reps .. (i+1)*reps`.
    pub fn repeat_rows(&mut self, a: Var, reps: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() || reps == 0 {
            return Err(Error::Dimension(
                "repeat_rows needs rank >= 1 and reps >= 1".into(),
            ));
        }
        let block: usize = shape[1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(src.len() * reps);
        for row in src.chunks(block) {
            for _ in 0..reps {
                data.extend_from_slice(row);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[0] *= reps;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(&shape);
                let gd = g.data_mut();
                for (j, chunk) in ctx.grad.data().chunks(block).enumerate() {
                    let i = j / reps;
                    for (d, s) in gd[i * block..(i + 1) * block].iter_mut().zip(chunk) {
                        *d += s;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::Dimension(format!(
                "cannot broadcast {sb:?} onto {sa:?}"
            )));
        }
        let block = self.value(b).len();
        let vb = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(block) {
            for (x, y) in chunk.iter_mut().zip(&vb) {
                *x += y;
            }
        }
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |ctx| {
                let mut gb = Tensor::zeros(&sb);
                for chunk in ctx.grad.data().chunks(block) {
                    for (x, y) in gb.data_mut().iter_mut().zip(chunk) {
                        *x += y;
                    }
                }
                vec![Some(ctx.grad.clone()), Some(gb)]
            }),
        ))
    }

    /// Dense layer on the last axis: `(.., din) x (din, dout) -> (.., dout)`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let din = *sx
            .last()
            .ok_or_else(|| Error::Dimension("linear on scalar".into()))?;
        if sw.len() != 2 || sw[0] != din {
            return Err(Error::Dimension(format!(
                "linear: input {sx:?} vs weight {sw:?}"
            )));
        }
        let dout = sw[1];
        let rows = self.value(x).len() / din.max(1);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; rows * dout];
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            for i in 0..din {
                let xi = xd[r * din + i];
                if xi == 0.0 {
                    continue;
                }
                for (o, wv) in orow.iter_mut().zip(&wd[i * dout..(i + 1) * dout]) {
                    *o += xi * wv;
                }
            }
        }
        let mut out_shape = sx.clone();
        *out_shape.last_mut().unwrap() = dout;
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            out,
            &[x, w],
            Box::new(move |ctx| {
                let (xv, wv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad.data();
                let mut gx = vec![0.0; rows * din];
                let mut gw = vec![0.0; din * dout];
                for r in 0..rows {
                    let grow = &g[r * dout..(r + 1) * dout];
                    for i in 0..din {
                        let wrow = &wv[i * dout..(i + 1) * dout];
                        gx[r * din + i] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        let xi = xv[r * din + i];
                        if xi != 0.0 {
                            for (gwv, gv) in gw[i * dout..(i + 1) * dout].iter_mut().zip(grow) {
                                *gwv += xi * gv;
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

    /// Left-multiplies each `(nodes, feat)` slice of `x: (n, nodes, feat)` by a
    /// fixed `(nodes, nodes)` operator.
    pub fn propagate(&mut self, op: &Tensor, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || op.shape() != [sx[1], sx[1]] {
            return Err(Error::Dimension(format!(
                "propagate: operator {:?} vs features {sx:?}",
                op.shape()
            )));
        }
        let (n, c, d) = (sx[0], sx[1], sx[2]);
        let opd = op.data().to_vec();
        let apply = move |src: &[f64], transpose: bool| -> Vec<f64> {
            let mut out = vec![0.0; n * c * d];
            for b in 0..n {
                let xb = &src[b * c * d..(b + 1) * c * d];
                let ob = &mut out[b * c * d..(b + 1) * c * d];
                for i in 0..c {
                    for j in 0..c {
                        let a = if transpose {
                            opd[j * c + i]
                        } else {
                            opd[i * c + j]
                        };
                        if a == 0.0 {
                            continue;
                        }
                        for (o, v) in ob[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&xb[j * d..(j + 1) * d])
                        {
                            *o += a * v;
                        }
                    }
                }
            }
            out
        };
        let out = Tensor::new(&sx, apply(self.value(x).data(), false))?;
        Ok(self.push(
            out,
            &[x],
            Box::new(move |ctx| {
                vec![Some(
                    Tensor::new(&sx, apply(ctx.grad.data(), true)).unwrap(),
                )]
            }),
        ))
    }

    /// Linear interpolation of the last axis onto `out_len` points with both
    /// endpoints aligned.
    pub fn interp_last(&mut self, a: Var, out_len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let in_len = *shape
            .last()
            .ok_or_else(|| Error::Dimension("interp on scalar".into()))?;
        if in_len == 0 || out_len == 0 {
            return Err(Error::Length("interpolation needs non-empty axes".into()));
        }
        let taps: Vec<(usize, usize, f64)> = (0..out_len)
            .map(|j| {
                if in_len == 1 || out_len == 1 {
                    return (0, 0, 0.0);
                }
                let pos = j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
                let lo = (pos.floor() as usize).min(in_len - 2);
                (lo, lo + 1, pos - lo as f64)
            })
            .collect();
        let rows = self.value(a).len() / in_len;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &src[r * in_len..(r + 1) * in_len];
            out.extend(
                taps.iter()
                    .map(|&(lo, hi, f)| (1.0 - f) * row[lo] + f * row[hi]),
            );
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = out_len;
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(&shape);
                let gd = g.data_mut();
                for (r, grow) in ctx.grad.data().chunks(out_len).enumerate() {
                    let dst = &mut gd[r * in_len..(r + 1) * in_len];
                    for (&(lo, hi, f), gv) in taps.iter().zip(grow) {
                        dst[lo] += (1.0 - f) * gv;
                        dst[hi] += f * gv;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Mode;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn relu_sum_gradient_is_one_for_positive_inputs() {
        let mut g = Graph::new(Mode::Train);
        let x = g.leaf(t(&[4], &[0.5, 1.0, 2.0, 3.5]));
        let r = g.relu(x);
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut g = Graph::new(Mode::Eval);
        let a = g.constant(t(&[2, 1, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 2, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        assert_eq!(
            g.value(c).data(),
            &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]
        );
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s), g.value(b));
    }

    #[test]
    fn interp_identity_when_lengths_match() {
        let mut g = Graph::new(Mode::Eval);
        let a = g.constant(t(&[1, 4], &[1., 3., 2., 5.]));
        let b = g.interp_last(a, 4).unwrap();
        assert_eq!(g.value(b).data(), &[1., 3., 2., 5.]);
        let c = g.interp_last(a, 7).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 2.5, 2., 3.5, 5.]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut g = Graph::new(Mode::Eval);
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    }
}
