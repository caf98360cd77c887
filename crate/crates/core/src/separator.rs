//! Audio/EEG fusion, stacked gated-attention and FSMN blocks, mask head.
//!
//! Feature maps are `(B, C, D)` throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, init_layer_norm, init_pointwise};
use crate::nn::{uniform_fan_in, Conv1dSpec, Graph, ParamRegistry, Var};

pub const FUSE_WEIGHT: &str = "sep.fuse.weight";
pub const MASK_WEIGHT: &str = "sep.mask.weight";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparatorConfig {
    /// Number of (gated-attention, FSMN) block pairs.
    #[serde(rename = "R")]
    pub blocks: usize,
    pub chunk_size: usize,
    pub fsmn_taps: usize,
    pub fsmn_dilations: Vec<usize>,
    pub mask_activation: MaskActivation,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        SeparatorConfig {
            blocks: 6,
            chunk_size: 64,
            fsmn_taps: 8,
            fsmn_dilations: vec![1, 2, 4, 8],
            mask_activation: MaskActivation::Relu,
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("separator.R must be >= 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("separator.chunk_size must be >= 1".into()));
        }
        if self.fsmn_taps == 0 {
            return Err(Error::Config("separator.fsmn_taps must be >= 1".into()));
        }
        if self.fsmn_dilations.is_empty()
            || self.fsmn_dilations[0] == 0
            || self.fsmn_dilations.windows(2).any(|p| p[1] <= p[0])
        {
            return Err(Error::Config(format!(
                "separator.fsmn_dilations {:?} must be positive and strictly increasing",
                self.fsmn_dilations
            )));
        }
        Ok(())
    }

    /// Frames spanned by the FSMN impulse response.
    pub fn fsmn_support(&self) -> usize {
        self.fsmn_dilations
            .iter()
            .map(|d| d * (self.fsmn_taps - 1))
            .sum::<usize>()
            + 1
    }
}

fn moss(r: usize) -> String {
    format!("sep.block{r}.moss")
}

fn fsmn(r: usize) -> String {
    format!("sep.block{r}.fsmn")
}

pub fn init_params(
    cfg: &SeparatorConfig,
    channels: usize,
    eeg_channels: usize,
    reg: &mut ParamRegistry,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    let c = channels;
    init_pointwise(reg, FUSE_WEIGHT, c, c + eeg_channels, rng)?;
    for r in 0..cfg.blocks {
        let p = moss(r);
        init_layer_norm(reg, &format!("{p}.norm"), c)?;
        for w in ["wq", "wk", "wu", "wv", "convm"] {
            init_pointwise(reg, &format!("{p}.{w}"), c, c, rng)?;
        }
        let p = fsmn(r);
        init_layer_norm(reg, &format!("{p}.norm"), c)?;
        init_pointwise(reg, &format!("{p}.conv_u"), c, c, rng)?;
        init_pointwise(reg, &format!("{p}.conv_v"), c, c, rng)?;
        for j in 0..cfg.fsmn_dilations.len() {
            init_pointwise(reg, &format!("{p}.stage{j}.mix"), c, (j + 1) * c, rng)?;
            reg.insert_param(
                &format!("{p}.stage{j}.taps"),
                uniform_fan_in(rng, &[c, 1, cfg.fsmn_taps], cfg.fsmn_taps),
            )?;
        }
    }
    init_pointwise(reg, MASK_WEIGHT, c, c, rng)
}

/// Channel concatenation followed by a 1x1 convolution back to `C`.
pub fn fuse(g: &mut Graph, reg: &ParamRegistry, speech: Var, eeg: Var) -> Result<Var> {
    let (ss, se) = (g.shape(speech).to_vec(), g.shape(eeg).to_vec());
    if ss.len() != 3 || se.len() != 3 || ss[0] != se[0] {
        return Err(Error::Dimension(format!("cannot fuse {ss:?} with {se:?}")));
    }
    if ss[2] != se[2] {
        return Err(Error::Alignment(format!(
            "speech has {} frames, EEG embedding {}",
            ss[2], se[2]
        )));
    }
    let cat = g.concat(&[speech, eeg], 1)?;
    layers::pointwise(g, reg, FUSE_WEIGHT, cat)
}

/// Block-local softmax attention plus global linearized attention on
/// `(B, D, d)` sequences.
pub fn attention_path(g: &mut Graph, q: Var, k: Var, v: Var, chunk: usize) -> Result<Var> {
    let local = g.softmax_attention(q, k, v, Some(chunk))?;
    let global = g.linear_attention(q, k, v)?;
    g.add(local, global)
}

/// `O = X + ConvM(sigmoid(U * AV * AU))`.
pub fn mossformer_block(
    g: &mut Graph,
    reg: &ParamRegistry,
    cfg: &SeparatorConfig,
    r: usize,
    x: Var,
) -> Result<Var> {
    let p = moss(r);
    let c = g.shape(x)[1];
    let xn = layers::layer_norm(g, reg, &format!("{p}.norm"), x, 1)?;
    let proj = |g: &mut Graph, w: &str| layers::pointwise(g, reg, &format!("{p}.{w}"), xn);
    let q = proj(g, "wq")?;
    let k = proj(g, "wk")?;
    let u = proj(g, "wu")?;
    let v = proj(g, "wv")?;
    let tokens = |g: &mut Graph, y: Var| g.permute(y, &[0, 2, 1]);
    let qt = tokens(g, q)?;
    let kt = tokens(g, k)?;
    let vu = g.concat(&[v, u], 1)?;
    let vut = tokens(g, vu)?;
    let a = attention_path(g, qt, kt, vut, cfg.chunk_size)?;
    let a = g.permute(a, &[0, 2, 1])?;
    let av = g.slice(a, 1, 0, c)?;
    let au = g.slice(a, 1, c, c)?;
    let gate = g.mul(u, av)?;
    let gate = g.mul(gate, au)?;
    let gate = g.sigmoid(gate);
    let update = layers::pointwise(g, reg, &format!("{p}.convm"), gate)?;
    g.add(x, update)
}

/// Dilated FSMN with dense connections: stage `j` mixes the concatenation of
/// all earlier outputs, then adds a depthwise dilated memory.
pub fn dilated_fsmn(
    g: &mut Graph,
    reg: &ParamRegistry,
    cfg: &SeparatorConfig,
    prefix: &str,
    v: Var,
) -> Result<Var> {
    let c = g.shape(v)[1];
    let mut outs = vec![v];
    for (j, &d) in cfg.fsmn_dilations.iter().enumerate() {
        let input = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        let m = layers::pointwise(g, reg, &format!("{prefix}.stage{j}.mix"), input)?;
        let taps = g.param(reg, &format!("{prefix}.stage{j}.taps"))?;
        let spec = Conv1dSpec {
            groups: c,
            ..Conv1dSpec::same(cfg.fsmn_taps, d)
        };
        let mem = g.conv1d(m, taps, spec)?;
        outs.push(g.add(m, mem)?);
    }
    Ok(*outs.last().unwrap())
}

/// `O = X + U * FSMN(V)`.
pub fn recurrent_block(
    g: &mut Graph,
    reg: &ParamRegistry,
    cfg: &SeparatorConfig,
    r: usize,
    x: Var,
) -> Result<Var> {
    let p = fsmn(r);
    let xn = layers::layer_norm(g, reg, &format!("{p}.norm"), x, 1)?;
    let u = layers::pointwise(g, reg, &format!("{p}.conv_u"), xn)?;
    let v = layers::pointwise(g, reg, &format!("{p}.conv_v"), xn)?;
    let y = dilated_fsmn(g, reg, cfg, &p, v)?;
    let uy = g.mul(u, y)?;
    g.add(x, uy)
}

/// `R` block pairs, then a 1x1 mask head with the configured activation.
pub fn estimate_mask(
    g: &mut Graph,
    reg: &ParamRegistry,
    cfg: &SeparatorConfig,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for r in 0..cfg.blocks {
        h = mossformer_block(g, reg, cfg, r, h)?;
        h = recurrent_block(g, reg, cfg, r, h)?;
    }
    let m = layers::pointwise(g, reg, MASK_WEIGHT, h)?;
    Ok(match cfg.mask_activation {
        MaskActivation::Relu => g.relu(m),
    })
}

pub fn apply_mask(g: &mut Graph, speech: Var, mask: Var) -> Result<Var> {
    if g.shape(speech) != g.shape(mask) {
        return Err(Error::Dimension(format!(
            "mask {:?} does not match embedding {:?}",
            g.shape(mask),
            g.shape(speech)
        )));
    }
    g.mul(speech, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(c: usize, ce: usize, cfg: &SeparatorConfig) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        init_params(cfg, c, ce, &mut reg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        reg
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn config_validation() {
        assert!(SeparatorConfig::default().validate().is_ok());
        let bad = SeparatorConfig {
            fsmn_dilations: vec![1, 4, 2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(SeparatorConfig::default().fsmn_support(), 106);
    }

    #[test]
    fn shapes_preserved_and_mask_nonnegative() {
        let cfg = SeparatorConfig {
            blocks: 2,
            chunk_size: 4,
            ..Default::default()
        };
        let reg = setup(6, 3, &cfg);
        let mut g = Graph::new(Mode::Train);
        let xs = g.constant(random(&[2, 6, 11], 1));
        let e = g.constant(random(&[2, 3, 11], 2));
        let f = fuse(&mut g, &reg, xs, e).unwrap();
        assert_eq!(g.shape(f), &[2, 6, 11]);
        let m = estimate_mask(&mut g, &reg, &cfg, f).unwrap();
        assert_eq!(g.shape(m), &[2, 6, 11]);
        assert!(g.value(m).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn misaligned_fuse_is_alignment_error() {
        let cfg = SeparatorConfig::default();
        let reg = setup(4, 2, &SeparatorConfig { blocks: 1, ..cfg });
        let mut g = Graph::new(Mode::Eval);
        let xs = g.constant(Tensor::zeros(&[1, 4, 10]));
        let e = g.constant(Tensor::zeros(&[1, 2, 9]));
        assert!(matches!(
            fuse(&mut g, &reg, xs, e),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn zero_convm_is_identity() {
        let cfg = SeparatorConfig {
            blocks: 1,
            ..Default::default()
        };
        let mut reg = setup(4, 2, &cfg);
        reg.set_value("sep.block0.moss.convm", Tensor::zeros(&[4, 4, 1]))
            .unwrap();
        reg.set_value("sep.block0.fsmn.conv_u", Tensor::zeros(&[4, 4, 1]))
            .unwrap();
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(random(&[1, 4, 9], 3));
        let o = mossformer_block(&mut g, &reg, &cfg, 0, x).unwrap();
        assert_eq!(g.value(o), g.value(x));
        let o = recurrent_block(&mut g, &reg, &cfg, 0, x).unwrap();
        assert_eq!(g.value(o), g.value(x));
    }

    #[test]
    fn fsmn_impulse_support() {
        let cfg = SeparatorConfig {
            blocks: 1,
            ..Default::default()
        };
        let mut reg = setup(2, 1, &cfg);
        // positive weights rule out accidental cancellation
        let names: Vec<String> = reg.iter().map(|(n, _)| n.to_string()).collect();
        for n in names.iter().filter(|n| n.contains("stage")) {
            let v = reg.value(n).unwrap().map(|w| w.abs() + 0.1);
            reg.set_value(n, v).unwrap();
        }
        let len = 300;
        let mut imp = Tensor::zeros(&[1, 2, len]);
        imp.data_mut()[150] = 1.0;
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(imp);
        let y = dilated_fsmn(&mut g, &reg, &cfg, "sep.block0.fsmn", x).unwrap();
        let row = &g.value(y).data()[..len];
        let first = row.iter().position(|&v| v != 0.0).unwrap();
        let last = row.iter().rposition(|&v| v != 0.0).unwrap();
        assert_eq!(last - first + 1, cfg.fsmn_support());
    }

    #[test]
    fn apply_mask_cases() {
        let mut g = Graph::new(Mode::Eval);
        let x = random(&[1, 3, 5], 9);
        let xv = g.constant(x.clone());
        let ones = g.constant(Tensor::full(&[1, 3, 5], 1.0));
        let zeros = g.constant(Tensor::zeros(&[1, 3, 5]));
        let a = apply_mask(&mut g, xv, ones).unwrap();
        assert_eq!(g.value(a), &x);
        let b = apply_mask(&mut g, xv, zeros).unwrap();
        assert!(g.value(b).data().iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(matches!(
            apply_mask(&mut g, xv, bad),
            Err(Error::Dimension(_))
        ));
    }
}
