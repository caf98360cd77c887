//! EEG encoder: temporal and frequency views, per-view graph convolution,
//! electrode self-attention and alignment to the speech frame axis.

pub mod features;
pub mod graph;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, init_linear, init_pointwise};
use crate::nn::{Graph, ParamRegistry, Var};
use crate::signal::{EegRecording, Montage};
use crate::tensor::Tensor;

pub use features::{frequency_features, multiscale_temporal, scale_widths, FREQ_FEATURES};
pub use graph::{
    default_adjacency, gcn_layer, montage_adjacency, normalize_adjacency, parse_montage,
    read_montage,
};

pub const ADJACENCY: &str = "eeg.adjacency";
const TGCN: &str = "eeg.tgcn";
const FGCN: &str = "eeg.fgcn";
const ATTN: &str = "eeg.attn";
pub const PROJECTION: &str = "eeg.proj.weight";

/// Which EEG views feed the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Both views, graph convolutions and attention.
    TimeFrequency,
    Temporal,
    Frequency,
    /// Raw EEG through a 1x1 projection, no feature extraction.
    Envelope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EegConfig {
    pub electrodes: usize,
    pub sample_rate: f64,
    /// Filters per temporal scale.
    pub scale_filters: usize,
    /// Temporal-view width `D_T` after the 1x1 reduction.
    pub temporal_features: usize,
    pub heads: usize,
    /// `C_EEG`.
    pub out_channels: usize,
    pub variant: EncoderVariant,
}

impl Default for EegConfig {
    fn default() -> Self {
        EegConfig {
            electrodes: 16,
            sample_rate: 128.0,
            scale_filters: 4,
            temporal_features: 22,
            heads: 4,
            out_channels: 64,
            variant: EncoderVariant::TimeFrequency,
        }
    }
}

impl EegConfig {
    /// Node feature width entering the electrode attention.
    pub fn node_width(&self) -> usize {
        match self.variant {
            EncoderVariant::TimeFrequency => self.temporal_features + FREQ_FEATURES,
            EncoderVariant::Temporal => self.temporal_features,
            EncoderVariant::Frequency => FREQ_FEATURES,
            EncoderVariant::Envelope => 0,
        }
    }

    fn uses_temporal(&self) -> bool {
        matches!(
            self.variant,
            EncoderVariant::TimeFrequency | EncoderVariant::Temporal
        )
    }

    fn uses_frequency(&self) -> bool {
        matches!(
            self.variant,
            EncoderVariant::TimeFrequency | EncoderVariant::Frequency
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.electrodes < 2 {
            return Err(Error::Config(
                "EEG encoder needs at least two electrodes".into(),
            ));
        }
        if self.out_channels == 0 {
            return Err(Error::Config("eeg.out_channels must be >= 1".into()));
        }
        if self.variant == EncoderVariant::Envelope {
            return Ok(());
        }
        if self.uses_temporal() {
            scale_widths(self.sample_rate)?;
            if self.scale_filters == 0 || self.temporal_features == 0 {
                return Err(Error::Config(
                    "temporal view needs filters and features >= 1".into(),
                ));
            }
        }
        if self.uses_frequency() && self.sample_rate < 100.0 {
            return Err(Error::Config(format!(
                "frequency view needs fs >= 100 Hz, got {}",
                self.sample_rate
            )));
        }
        let d = self.node_width();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} attention heads do not divide node width {d}",
                self.heads
            )));
        }
        Ok(())
    }
}

pub fn init_params(
    cfg: &EegConfig,
    reg: &mut ParamRegistry,
    montage: Option<&Montage>,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    let c = cfg.electrodes;
    if cfg.variant == EncoderVariant::Envelope {
        return init_pointwise(reg, PROJECTION, cfg.out_channels, c, rng);
    }
    let a = match montage {
        Some(m) if m.len() != c => {
            return Err(Error::Validation(format!(
                "montage lists {} electrodes, encoder expects {c}",
                m.len()
            )))
        }
        Some(m) => montage_adjacency(m)?,
        None => default_adjacency(c),
    };
    reg.insert_buffer(ADJACENCY, normalize_adjacency(&a)?)?;
    if cfg.uses_temporal() {
        features::init_multiscale(
            reg,
            cfg.sample_rate,
            cfg.scale_filters,
            cfg.temporal_features,
            rng,
        )?;
        graph::init_gcn(reg, TGCN, cfg.temporal_features, rng)?;
    }
    if cfg.uses_frequency() {
        graph::init_gcn(reg, FGCN, FREQ_FEATURES, rng)?;
    }
    let d = cfg.node_width();
    for p in ["wq", "wk", "wv", "wo"] {
        init_linear(reg, &format!("{ATTN}.{p}"), d, d, rng)?;
    }
    init_linear(reg, PROJECTION, c * d, cfg.out_channels, rng)
}

/// Sinusoidal encoding of electrode ordinal, `(C, d)`.
pub fn positional_encoding(c: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[c, d], |idx| {
        let (pos, i) = ((idx / d) as f64, idx % d);
        let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
        if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

fn check_batch(cfg: &EegConfig, batch: &[EegRecording]) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Validation("empty EEG batch".into()))?;
    let t = first.num_samples();
    for rec in batch {
        if rec.num_channels() != cfg.electrodes {
            return Err(Error::Validation(format!(
                "EEG has {} channels, encoder expects {}",
                rec.num_channels(),
                cfg.electrodes
            )));
        }
        if rec.sample_rate != cfg.sample_rate {
            return Err(Error::Validation(format!(
                "EEG sampled at {} Hz, encoder expects {} Hz",
                rec.sample_rate, cfg.sample_rate
            )));
        }
        if rec.num_samples() != t {
            return Err(Error::Validation("EEG batch items differ in length".into()));
        }
        if let Some(m) = &rec.montage {
            if m.len() != rec.num_channels() {
                return Err(Error::Validation(format!(
                    "montage lists {} electrodes for {} channels",
                    m.len(),
                    rec.num_channels()
                )));
            }
        }
    }
    Ok(t)
}

/// Multi-head softmax self-attention over electrodes with a residual:
/// `H + Wo SA(H + PE)` on `(N, C, d)`.
pub fn electrode_attention(
    g: &mut Graph,
    reg: &ParamRegistry,
    heads: usize,
    h: Var,
) -> Result<Var> {
    let s = g.shape(h).to_vec();
    let (n, c, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let pe = g.constant(positional_encoding(c, d));
    let hp = g.add_broadcast(h, pe)?;
    let split = |g: &mut Graph, name: &str| -> Result<Var> {
        let y = layers::linear(g, reg, &format!("{ATTN}.{name}"), hp)?;
        let y = g.reshape(y, &[n, c, heads, dh])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, &[n * heads, c, dh])
    };
    let q = split(g, "wq")?;
    let k = split(g, "wk")?;
    let v = split(g, "wv")?;
    let a = g.softmax_attention(q, k, v, None)?;
    let a = g.reshape(a, &[n, heads, c, dh])?;
    let a = g.permute(a, &[0, 2, 1, 3])?;
    let a = g.reshape(a, &[n, c, d])?;
    let o = layers::linear(g, reg, &format!("{ATTN}.wo"), a)?;
    g.add(h, o)
}

/// Raw EEG batch to `(B, C_EEG, frames)`.
pub fn encode_eeg(
    g: &mut Graph,
    reg: &ParamRegistry,
    cfg: &EegConfig,
    batch: &[EegRecording],
    frames: usize,
) -> Result<Var> {
    let t = check_batch(cfg, batch)?;
    let (b, c) = (batch.len(), cfg.electrodes);
    let raw = Tensor::new(
        &[b, c, t],
        batch
            .iter()
            .flat_map(|r| r.channels.iter().flatten().copied())
            .collect(),
    )?;
    let raw = g.constant(raw);

    if cfg.variant == EncoderVariant::Envelope {
        let y = layers::pointwise(g, reg, PROJECTION, raw)?;
        return g.interp_last(y, frames);
    }

    let a_hat = reg.value(ADJACENCY)?.clone();
    let mut views = Vec::with_capacity(2);
    if cfg.uses_temporal() {
        let et = multiscale_temporal(g, reg, cfg.sample_rate, raw)?;
        let dt = cfg.temporal_features;
        let et = g.permute(et, &[0, 3, 1, 2])?;
        let et = g.reshape(et, &[b * t, c, dt])?;
        views.push(gcn_layer(g, reg, TGCN, et, &a_hat)?);
    }
    if cfg.uses_frequency() {
        let mut ef = Vec::with_capacity(b * c * FREQ_FEATURES);
        for rec in batch {
            ef.extend_from_slice(frequency_features(rec)?.data());
        }
        let ef = g.constant(Tensor::new(&[b, c, FREQ_FEATURES], ef)?);
        let ef = gcn_layer(g, reg, FGCN, ef, &a_hat)?;
        views.push(g.repeat_rows(ef, t)?);
    }
    let h = if views.len() == 1 {
        views[0]
    } else {
        g.concat(&views, 2)?
    };
    let z = electrode_attention(g, reg, cfg.heads, h)?;
    let d = cfg.node_width();
    let z = g.reshape(z, &[b, t, c * d])?;
    let y = layers::linear(g, reg, PROJECTION, z)?;
    let y = g.permute(y, &[0, 2, 1])?;
    g.interp_last(y, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(variant: EncoderVariant) -> EegConfig {
        EegConfig {
            electrodes: 4,
            scale_filters: 2,
            temporal_features: 6,
            heads: 2,
            out_channels: 5,
            variant,
            ..Default::default()
        }
    }

    fn recording(seed: u64) -> EegRecording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EegRecording::new(
            (0..4)
                .map(|_| (0..192).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            128.0,
        )
        .unwrap()
    }

    #[test]
    fn default_widths_divide_heads() {
        let cfg = EegConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.node_width(), 32);
    }

    #[test]
    fn every_variant_has_declared_shape() {
        for v in [
            EncoderVariant::TimeFrequency,
            EncoderVariant::Temporal,
            EncoderVariant::Frequency,
            EncoderVariant::Envelope,
        ] {
            let cfg = small_cfg(v);
            let mut reg = ParamRegistry::new();
            init_params(&cfg, &mut reg, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let batch = [recording(1), recording(2)];
            for mode in [Mode::Train, Mode::Eval] {
                let mut g = Graph::new(mode);
                let y = encode_eeg(&mut g, &reg, &cfg, &batch, 37).unwrap();
                assert_eq!(g.shape(y), &[2, 5, 37], "{v:?}");
                assert!(g.value(y).all_finite());
            }
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = small_cfg(EncoderVariant::TimeFrequency);
        let mut reg = ParamRegistry::new();
        init_params(&cfg, &mut reg, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let run = || {
            let mut g = Graph::new(Mode::Eval);
            let y = encode_eeg(&mut g, &reg, &cfg, &[recording(4)], 20).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn wrong_channel_count_is_validation_error() {
        let cfg = small_cfg(EncoderVariant::TimeFrequency);
        let mut reg = ParamRegistry::new();
        init_params(&cfg, &mut reg, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let rec = EegRecording::new(vec![vec![0.0; 192]; 3], 128.0).unwrap();
        let mut g = Graph::new(Mode::Eval);
        assert!(matches!(
            encode_eeg(&mut g, &reg, &cfg, &[rec], 10),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_output_projection_leaves_residual() {
        let cfg = small_cfg(EncoderVariant::Frequency);
        let mut reg = ParamRegistry::new();
        init_params(&cfg, &mut reg, None, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let d = cfg.node_width();
        reg.set_value("eeg.attn.wo", Tensor::zeros(&[d, d]))
            .unwrap();
        let mut g = Graph::new(Mode::Eval);
        let h = g.constant(Tensor::from_fn(&[3, 4, d], |i| (i as f64).sin()));
        let z = electrode_attention(&mut g, &reg, cfg.heads, h).unwrap();
        assert_eq!(g.value(z), g.value(h));
    }

    #[test]
    fn positional_encoding_rows_differ() {
        let pe = positional_encoding(4, 6);
        assert_eq!(&pe.data()[..2], &[0.0, 1.0]);
        assert_ne!(&pe.data()[..6], &pe.data()[6..12]);
    }

    #[test]
    fn montage_size_mismatch() {
        let cfg = small_cfg(EncoderVariant::TimeFrequency);
        let m = parse_montage("a 0 0 0\nb 1 0 0\n").unwrap();
        let mut reg = ParamRegistry::new();
        assert!(matches!(
            init_params(&cfg, &mut reg, Some(&m), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Validation(_))
        ));
    }
}
