//! Finite-difference checks over every differentiable op and layer.
//!
//! Each case maps its inputs (data and, for registry-backed layers, the
//! layer's trainable weights) to a tensor, which is reduced to a scalar by a
//! fixed random projection before comparison.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{self, CodecConfig};
use crate::eeg::{self, features, graph as eeg_graph};
use crate::error::Result;
use crate::metrics::si_sdr_loss;
use crate::nn::{
    grad_check, Conv1dSpec, Graph, ParamKind, ParamRegistry, Var, BN_EPS, DEFAULT_STEP,
};
use crate::separator::{self, SeparatorConfig};
use crate::tensor::Tensor;

/// Largest accepted relative error in double precision.
pub const DOUBLE_TOLERANCE: f64 = 1e-6;

type CaseFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct Case {
    pub op: &'static str,
    pub inputs: Vec<Tensor>,
    f: CaseFn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_err: f64,
    pub seconds: f64,
    pub passed: bool,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `sum(y * r)` for a fixed random `r` of the same shape.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(random(&mut rng, g.shape(y)));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

impl Case {
    pub fn new(
        op: &'static str,
        inputs: Vec<Tensor>,
        f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
    ) -> Case {
        Case {
            op,
            inputs,
            f: Box::new(f),
        }
    }

    /// Inputs `x` followed by every trainable entry of `reg` under `prefix`;
    /// the weights are bound so `layer` reads them from the graph.
    fn layer(
        op: &'static str,
        x: Vec<Tensor>,
        reg: ParamRegistry,
        prefixes: &[&str],
        layer: impl Fn(&mut Graph, &ParamRegistry, &[Var]) -> Result<Var> + 'static,
    ) -> Case {
        let names: Vec<String> = reg
            .iter()
            .filter(|(n, e)| {
                e.kind == ParamKind::Trainable && prefixes.iter().any(|p| n.starts_with(p))
            })
            .map(|(n, _)| n.to_string())
            .collect();
        let nx = x.len();
        let mut inputs = x;
        inputs.extend(names.iter().map(|n| reg.value(n).expect("listed").clone()));
        Case::new(op, inputs, move |g, v| {
            for (name, var) in names.iter().zip(&v[nx..]) {
                g.bind_param(name, *var)?;
            }
            layer(g, &reg, &v[..nx])
        })
    }

    /// Same forward, but the backward pass scales the incoming gradient by
    /// 1.01, as a broken op would.
    pub fn corrupted(self) -> Case {
        let f = self.f;
        Case {
            op: self.op,
            inputs: self.inputs,
            f: Box::new(move |g, v| {
                let y = f(g, v)?;
                let value = g.value(y).clone();
                Ok(g.push(value, &[y], Box::new(|b| vec![Some(b.grad.scale(1.01))])))
            }),
        }
    }

    pub fn run(&self, tolerance: f64) -> Result<OpCheck> {
        let start = Instant::now();
        let f = &self.f;
        let r = grad_check(
            |g, v| {
                let y = f(g, v)?;
                project(g, y, 99)
            },
            &self.inputs,
            DEFAULT_STEP,
        )?;
        Ok(OpCheck {
            op: self.op,
            max_rel_err: r.max_rel_err,
            seconds: start.elapsed().as_secs_f64(),
            passed: r.max_rel_err < tolerance,
        })
    }
}

/// Every differentiable op of the model, at small sizes.
pub fn cases() -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let rng = &mut rng;
    let mut out = Vec::new();

    out.push(Case::new(
        "conv1d",
        vec![random(rng, &[2, 4, 11]), random(rng, &[6, 2, 3])],
        |g, v| {
            let spec = Conv1dSpec {
                stride: 2,
                pad_left: 3,
                pad_right: 1,
                dilation: 2,
                groups: 2,
            };
            g.conv1d(v[0], v[1], spec)
        },
    ));
    out.push(Case::new(
        "conv1d_transpose",
        vec![random(rng, &[2, 3, 5]), random(rng, &[3, 2, 4])],
        |g, v| g.conv1d_transpose(v[0], v[1], 2),
    ));
    out.push(Case::new(
        "bn_elu",
        vec![
            random(rng, &[3, 4, 5]),
            random(rng, &[4]),
            random(rng, &[4]),
        ],
        |g, v| g.bn_elu(v[0], 1, v[1], v[2], None, BN_EPS),
    ));
    out.push(Case::new(
        "layer_norm",
        vec![random(rng, &[2, 5, 6]), random(rng, &[5])],
        |g, v| g.layer_norm(v[0], 1, v[1], crate::nn::layers::LN_EPS),
    ));
    out.push(Case::new(
        "linear",
        vec![random(rng, &[2, 3, 4]), random(rng, &[4, 5])],
        |g, v| g.linear(v[0], v[1]),
    ));
    out.push(Case::new(
        "softmax_attention",
        vec![
            random(rng, &[2, 6, 4]),
            random(rng, &[2, 6, 4]),
            random(rng, &[2, 6, 3]),
        ],
        |g, v| g.softmax_attention(v[0], v[1], v[2], None),
    ));
    out.push(Case::new(
        "chunked_attention",
        vec![
            random(rng, &[1, 10, 4]),
            random(rng, &[1, 10, 4]),
            random(rng, &[1, 10, 3]),
        ],
        |g, v| g.softmax_attention(v[0], v[1], v[2], Some(4)),
    ));
    out.push(Case::new(
        "linear_attention",
        vec![
            random(rng, &[2, 7, 4]),
            random(rng, &[2, 7, 4]),
            random(rng, &[2, 7, 3]),
        ],
        |g, v| g.linear_attention(v[0], v[1], v[2]),
    ));
    out.push(Case::new(
        "gates",
        vec![
            random(rng, &[2, 3, 5]),
            random(rng, &[2, 3, 5]),
            random(rng, &[2, 3, 5]),
        ],
        |g, v| {
            let ab = g.mul(v[0], v[1])?;
            let abc = g.mul(ab, v[2])?;
            let s = g.sigmoid(abc);
            let r = g.relu(v[1]);
            let e = g.elu(v[2]);
            let re = g.add(r, e)?;
            g.add(s, re)
        },
    ));
    out.push(Case::new(
        "tensor_plumbing",
        vec![
            random(rng, &[2, 3, 4]),
            random(rng, &[2, 1, 4]),
            random(rng, &[3, 4]),
        ],
        |g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let p = g.permute(c, &[0, 2, 1])?;
            let s = g.slice(p, 1, 1, 2)?;
            let r = g.reshape(s, &[2, 1, 8])?;
            let i = g.interp_last(r, 13)?;
            let b = g.add_broadcast(v[0], v[2])?;
            let rr = g.repeat_rows(v[1], 2)?;
            let m = g.mean(b);
            let sc = g.scale(i, 0.7);
            let y = g.sum(sc);
            let t = g.sum(rr);
            let mt = g.add(m, t)?;
            let d = g.sub(b, v[0])?;
            let d = g.sum(d);
            let mt = g.add(mt, d)?;
            g.add(y, mt)
        },
    ));
    out.push(Case::new("si_sdr_loss", vec![random(rng, &[2, 1, 40])], {
        let reference = random(rng, &[2, 1, 40]);
        move |g, v| si_sdr_loss(g, v[0], &reference)
    }));

    let c = 5;
    let mut reg = ParamRegistry::new();
    eeg_graph::init_gcn(&mut reg, "gcn", 4, rng)?;
    let mut a = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for j in i..c {
            let w = rng.gen_range(0.0..1.0);
            a.data_mut()[i * c + j] = w;
            a.data_mut()[j * c + i] = w;
        }
    }
    let a_hat = eeg_graph::normalize_adjacency(&a)?;
    out.push(Case::layer(
        "gcn_layer",
        vec![random(rng, &[3, c, 4])],
        reg,
        &["gcn"],
        move |g, r, v| eeg_graph::gcn_layer(g, r, "gcn", v[0], &a_hat),
    ));

    let mut reg = ParamRegistry::new();
    features::init_multiscale(&mut reg, 64.0, 2, 3, rng)?;
    out.push(Case::layer(
        "multiscale_temporal",
        vec![random(rng, &[1, 2, 34])],
        reg,
        &["eeg.temporal"],
        |g, r, v| features::multiscale_temporal(g, r, 64.0, v[0]),
    ));

    let ecfg = eeg::EegConfig {
        electrodes: 3,
        scale_filters: 1,
        temporal_features: 2,
        heads: 2,
        out_channels: 2,
        variant: eeg::EncoderVariant::Temporal,
        ..Default::default()
    };
    let mut reg = ParamRegistry::new();
    eeg::init_params(&ecfg, &mut reg, None, rng)?;
    out.push(Case::layer(
        "electrode_attention",
        vec![random(rng, &[2, 3, 2])],
        reg,
        &["eeg.attn"],
        |g, r, v| eeg::electrode_attention(g, r, 2, v[0]),
    ));

    let scfg = SeparatorConfig {
        blocks: 1,
        chunk_size: 5,
        fsmn_taps: 3,
        fsmn_dilations: vec![1, 2],
        ..Default::default()
    };
    let mut reg = ParamRegistry::new();
    separator::init_params(&scfg, 3, 2, &mut reg, rng)?;
    let s1 = scfg.clone();
    out.push(Case::layer(
        "fsmn",
        vec![random(rng, &[1, 3, 12])],
        reg.clone(),
        &["sep.block0.fsmn.stage"],
        move |g, r, v| separator::dilated_fsmn(g, r, &s1, "sep.block0.fsmn", v[0]),
    ));
    let s2 = scfg.clone();
    out.push(Case::layer(
        "recurrent_block",
        vec![random(rng, &[1, 3, 12])],
        reg.clone(),
        &["sep.block0.fsmn"],
        move |g, r, v| separator::recurrent_block(g, r, &s2, 0, v[0]),
    ));
    let s3 = scfg.clone();
    out.push(Case::layer(
        "mossformer_block",
        vec![random(rng, &[1, 3, 12])],
        reg.clone(),
        &["sep.block0.moss"],
        move |g, r, v| separator::mossformer_block(g, r, &s3, 0, v[0]),
    ));
    out.push(Case::layer(
        "fuse_and_mask",
        vec![random(rng, &[1, 3, 12]), random(rng, &[1, 2, 12])],
        reg,
        &["sep.fuse", "sep.mask"],
        move |g, r, v| {
            let f = separator::fuse(g, r, v[0], v[1])?;
            let m = crate::nn::layers::pointwise(g, r, separator::MASK_WEIGHT, f)?;
            let m = g.relu(m);
            separator::apply_mask(g, v[0], m)
        },
    ));

    let ccfg = CodecConfig {
        kernel_len: 6,
        stride: 3,
        channels: 4,
    };
    let mut reg = ParamRegistry::new();
    codec::init_params(&ccfg, &mut reg, rng)?;
    out.push(Case::layer(
        "codec",
        vec![random(rng, &[1, 1, 29])],
        reg,
        &["codec"],
        move |g, r, v| {
            let e = codec::encode_speech(g, r, &ccfg, v[0])?;
            codec::decode_speech(g, r, &ccfg, e, Some(29))
        },
    ));
    Ok(out)
}

/// Runs every case; `corrupt` names one case whose backward is broken on
/// purpose.
pub fn run_suite(tolerance: f64, corrupt: Option<&str>) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for case in cases()? {
        let case = if corrupt == Some(case.op) {
            case.corrupted()
        } else {
            case
        };
        out.push(case.run(tolerance)?);
    }
    Ok(out)
}

pub fn op_names() -> Result<Vec<&'static str>> {
    Ok(cases()?.iter().map(|c| c.op).collect())
}
