//! Registry-backed building blocks shared by the model modules.

use rand::Rng;

use crate::error::Result;
use crate::nn::conv::Conv1dSpec;
use crate::nn::graph::{Graph, Var};
use crate::nn::norm::{RunningStats, BN_EPS};
use crate::nn::params::{uniform_fan_in, ParamRegistry};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-8;

/// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
pub fn init_batch_norm(reg: &mut ParamRegistry, prefix: &str, ch: usize) -> Result<()> {
    reg.insert_param(&format!("{prefix}.gamma"), Tensor::full(&[ch], 1.0))?;
    reg.insert_param(&format!("{prefix}.beta"), Tensor::zeros(&[ch]))?;
    reg.insert_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[ch]))?;
    reg.insert_buffer(&format!("{prefix}.running_var"), Tensor::full(&[ch], 1.0))?;
    Ok(())
}

/// Batch norm over `axis` followed by ELU, using the layer stored at `prefix`.
pub fn bn_elu(
    g: &mut Graph,
    reg: &ParamRegistry,
    prefix: &str,
    x: Var,
    axis: usize,
) -> Result<Var> {
    let gamma = g.param(reg, &format!("{prefix}.gamma"))?;
    let beta = g.param(reg, &format!("{prefix}.beta"))?;
    let mean = reg.value(&format!("{prefix}.running_mean"))?;
    let var = reg.value(&format!("{prefix}.running_var"))?;
    let stats = RunningStats {
        prefix,
        mean: mean.data(),
        var: var.data(),
    };
    g.bn_elu(x, axis, gamma, beta, Some(stats), BN_EPS)
}

pub fn init_layer_norm(reg: &mut ParamRegistry, prefix: &str, ch: usize) -> Result<()> {
    reg.insert_param(&format!("{prefix}.gain"), Tensor::full(&[ch], 1.0))
}

pub fn layer_norm(
    g: &mut Graph,
    reg: &ParamRegistry,
    prefix: &str,
    x: Var,
    axis: usize,
) -> Result<Var> {
    let gain = g.param(reg, &format!("{prefix}.gain"))?;
    g.layer_norm(x, axis, gain, LN_EPS)
}

/// `(cout, cin, 1)` kernel with fan-in `cin`.
pub fn init_pointwise(
    reg: &mut ParamRegistry,
    name: &str,
    cout: usize,
    cin: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    reg.insert_param(name, uniform_fan_in(rng, &[cout, cin, 1], cin))
}

/// 1x1 convolution over `(B, C, T)`.
pub fn pointwise(g: &mut Graph, reg: &ParamRegistry, name: &str, x: Var) -> Result<Var> {
    let w = g.param(reg, name)?;
    g.conv1d(x, w, Conv1dSpec::default())
}

/// Dense weight `(din, dout)`.
pub fn init_linear(
    reg: &mut ParamRegistry,
    name: &str,
    din: usize,
    dout: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    reg.insert_param(name, uniform_fan_in(rng, &[din, dout], din))
}

pub fn linear(g: &mut Graph, reg: &ParamRegistry, name: &str, x: Var) -> Result<Var> {
    let w = g.param(reg, name)?;
    g.linear(x, w)
}
