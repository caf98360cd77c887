//! Learned time-domain speech encoder and transposed-convolution decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform_fan_in, Conv1dSpec, Graph, ParamRegistry, Var};

pub const ENCODER_WEIGHT: &str = "codec.encoder.weight";
pub const DECODER_WEIGHT: &str = "codec.decoder.weight";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub kernel_len: usize,
    pub stride: usize,
    pub channels: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            kernel_len: 20,
            stride: 10,
            channels: 128,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_len == 0 || !self.kernel_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "codec kernel {} must be even",
                self.kernel_len
            )));
        }
        if self.stride != self.kernel_len / 2 {
            return Err(Error::Config(format!(
                "codec stride {} must be half the kernel {}",
                self.stride, self.kernel_len
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("codec needs at least one channel".into()));
        }
        Ok(())
    }

    /// Zero samples appended so that `(len + pad - K)` is a multiple of the stride.
    pub fn right_pad(&self, len: usize) -> usize {
        let rem = (len.saturating_sub(self.kernel_len)) % self.stride;
        if rem == 0 {
            0
        } else {
            self.stride - rem
        }
    }

    /// Frame count `S` of the embedding for a `len`-sample input.
    pub fn frames(&self, len: usize) -> Result<usize> {
        if len < self.kernel_len {
            return Err(Error::Length(format!(
                "input of {len} samples is shorter than the {}-sample kernel",
                self.kernel_len
            )));
        }
        Ok((len + self.right_pad(len) - self.kernel_len) / self.stride + 1)
    }

    /// Decoded length for `frames` embedding frames.
    pub fn decoded_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.stride + self.kernel_len
    }
}

pub fn init_params(cfg: &CodecConfig, reg: &mut ParamRegistry, rng: &mut impl Rng) -> Result<()> {
    let (c, k) = (cfg.channels, cfg.kernel_len);
    reg.insert_param(ENCODER_WEIGHT, uniform_fan_in(rng, &[c, 1, k], k))?;
    reg.insert_param(DECODER_WEIGHT, uniform_fan_in(rng, &[c, 1, k], c))?;
    Ok(())
}

/// `(B, 1, T) -> (B, C, S)`, non-negative.
pub fn encode_speech(g: &mut Graph, reg: &ParamRegistry, cfg: &CodecConfig, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != 1 {
        return Err(Error::Dimension(format!(
            "encoder expects (B, 1, T), got {shape:?}"
        )));
    }
    cfg.frames(shape[2])?;
    let w = g.param(reg, ENCODER_WEIGHT)?;
    let spec = Conv1dSpec {
        stride: cfg.stride,
        pad_right: cfg.right_pad(shape[2]),
        ..Default::default()
    };
    let y = g.conv1d(x, w, spec)?;
    Ok(g.relu(y))
}

/// `(B, C, S) -> (B, 1, T)`; trimmed to `out_len` when given.
pub fn decode_speech(
    g: &mut Graph,
    reg: &ParamRegistry,
    cfg: &CodecConfig,
    emb: Var,
    out_len: Option<usize>,
) -> Result<Var> {
    let shape = g.shape(emb).to_vec();
    if shape.len() != 3 || shape[1] != cfg.channels {
        return Err(Error::Dimension(format!(
            "decoder expects (B, {}, S), got {shape:?}",
            cfg.channels
        )));
    }
    let w = g.param(reg, DECODER_WEIGHT)?;
    let y = g.conv1d_transpose(emb, w, cfg.stride)?;
    match out_len {
        Some(n) if n < g.shape(y)[2] => g.slice(y, 2, 0, n),
        Some(n) if n > g.shape(y)[2] => Err(Error::Dimension(format!(
            "cannot trim {} decoded samples to {n}",
            g.shape(y)[2]
        ))),
        _ => Ok(y),
    }
}

/// Encoder/decoder weights for which `decode(encode(x))` reproduces `x`
/// except at the first and last half-kernel, where only one frame overlaps.
/// Needs `channels >= 2 * kernel_len`.
pub fn passthrough_params(cfg: &CodecConfig, reg: &mut ParamRegistry) -> Result<()> {
    let (c, k) = (cfg.channels, cfg.kernel_len);
    if c < 2 * k {
        return Err(Error::Config(format!(
            "pass-through codec needs >= {} channels, have {c}",
            2 * k
        )));
    }
    let mut enc = crate::Tensor::zeros(&[c, 1, k]);
    let mut dec = crate::Tensor::zeros(&[c, 1, k]);
    // each sample sits under two frames, hence the 1/2
    let share = k as f64 / cfg.stride as f64;
    for tap in 0..k {
        enc.data_mut()[tap * k + tap] = 1.0;
        enc.data_mut()[(k + tap) * k + tap] = -1.0;
        dec.data_mut()[tap * k + tap] = 1.0 / share;
        dec.data_mut()[(k + tap) * k + tap] = -1.0 / share;
    }
    for (name, t) in [(ENCODER_WEIGHT, enc), (DECODER_WEIGHT, dec)] {
        if reg.contains(name) {
            reg.set_value(name, t)?;
        } else {
            reg.insert_param(name, t)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(c: usize) -> (CodecConfig, ParamRegistry) {
        let cfg = CodecConfig {
            channels: c,
            ..Default::default()
        };
        let mut reg = ParamRegistry::new();
        init_params(&cfg, &mut reg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (cfg, reg)
    }

    #[test]
    fn default_shapes() {
        let (cfg, reg) = setup(128);
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::from_fn(&[1, 1, 1020], |i| (i as f64 * 0.1).sin()));
        let e = encode_speech(&mut g, &reg, &cfg, x).unwrap();
        assert_eq!(g.shape(e), &[1, 128, 101]);
        let y = decode_speech(&mut g, &reg, &cfg, e, None).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1020]);
    }

    #[test]
    fn zero_waveform_zero_embedding() {
        let (cfg, reg) = setup(16);
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::zeros(&[1, 1, 200]));
        let e = encode_speech(&mut g, &reg, &cfg, x).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
        let y = decode_speech(&mut g, &reg, &cfg, e, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ragged_lengths_are_padded_and_trimmed() {
        let (cfg, reg) = setup(8);
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::full(&[1, 1, 1027], 0.1));
        let e = encode_speech(&mut g, &reg, &cfg, x).unwrap();
        assert_eq!(g.shape(e)[2], 102);
        let y = decode_speech(&mut g, &reg, &cfg, e, Some(1027)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1027]);
    }

    #[test]
    fn too_short_is_length_error() {
        let (cfg, reg) = setup(8);
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::zeros(&[1, 1, 19]));
        assert!(matches!(
            encode_speech(&mut g, &reg, &cfg, x),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn stride_must_be_half_kernel() {
        let cfg = CodecConfig {
            kernel_len: 20,
            stride: 5,
            channels: 4,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn passthrough_reconstructs_interior() {
        let cfg = CodecConfig {
            channels: 40,
            ..Default::default()
        };
        let mut reg = ParamRegistry::new();
        passthrough_params(&cfg, &mut reg).unwrap();
        let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = Graph::new(Mode::Eval);
        let xv = g.constant(Tensor::new(&[1, 1, 400], x.clone()).unwrap());
        let e = encode_speech(&mut g, &reg, &cfg, xv).unwrap();
        let y = decode_speech(&mut g, &reg, &cfg, e, Some(400)).unwrap();
        let y = g.value(y).data();
        for t in 10..390 {
            assert!((y[t] - x[t]).abs() < 1e-12);
        }
        assert!((y[0] - 0.5 * x[0]).abs() < 1e-12);
    }
}
