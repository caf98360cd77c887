//! End-to-end extractor: speech encoder, EEG encoder, fusion, mask, decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{self, CodecConfig};
use crate::eeg::{self, EegConfig};
use crate::error::{Error, Result, StageExt};
use crate::nn::{Graph, Mode, ParamRegistry, Var};
use crate::separator::{self, SeparatorConfig};
use crate::signal::{EegRecording, Montage, Waveform};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    pub eeg: EegConfig,
    pub separator: SeparatorConfig,
}

impl ModelConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        [
            self.codec.validate(),
            self.eeg.validate(),
            self.separator.validate(),
        ]
        .into_iter()
        .filter_map(|r| r.err().map(|e| e.to_string()))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(Error::Config(p.join("; "))),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamRegistry,
    /// Skips EEG and separator and uses `M = 1`.
    pub unit_mask: bool,
}

impl Model {
    pub fn init(config: ModelConfig, montage: Option<&Montage>, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamRegistry::new();
        codec::init_params(&config.codec, &mut params, &mut rng)?;
        eeg::init_params(&config.eeg, &mut params, montage, &mut rng)?;
        separator::init_params(
            &config.separator,
            config.codec.channels,
            config.eeg.out_channels,
            &mut params,
            &mut rng,
        )?;
        let mut model = Model {
            config,
            params,
            unit_mask: false,
        };
        model.round_to_f32();
        Ok(model)
    }

    /// Pass-through codec with the mask forced to one.
    pub fn identity(config: ModelConfig) -> Result<Model> {
        config.codec.validate()?;
        let mut params = ParamRegistry::new();
        codec::passthrough_params(&config.codec, &mut params)?;
        Ok(Model {
            config,
            params,
            unit_mask: true,
        })
    }

    /// Rounds every stored tensor to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for (_, e) in self.params.iter_mut() {
            e.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// `(B, 1, T)` estimate for equally long mixtures and their EEG.
    pub fn forward(
        &self,
        g: &mut Graph,
        mixtures: &[&Waveform],
        eeg: &[&EegRecording],
    ) -> Result<Var> {
        let t = check_inputs(mixtures, eeg)?;
        let b = mixtures.len();
        let x = Tensor::new(
            &[b, 1, t],
            mixtures
                .iter()
                .flat_map(|m| m.samples.iter().copied())
                .collect(),
        )?;
        let x = g.constant(x);
        let cfg = &self.config;
        let emb = codec::encode_speech(g, &self.params, &cfg.codec, x).stage("speech encoder")?;
        let masked = if self.unit_mask {
            emb
        } else {
            let frames = g.shape(emb)[2];
            let batch: Vec<EegRecording> = eeg.iter().map(|r| (*r).clone()).collect();
            let e =
                eeg::encode_eeg(g, &self.params, &cfg.eeg, &batch, frames).stage("eeg encoder")?;
            let fused = separator::fuse(g, &self.params, emb, e).stage("fusion")?;
            let mask = separator::estimate_mask(g, &self.params, &cfg.separator, fused)
                .stage("separator")?;
            separator::apply_mask(g, emb, mask).stage("mask")?
        };
        codec::decode_speech(g, &self.params, &cfg.codec, masked, Some(t)).stage("speech decoder")
    }

    /// Eval-mode extraction of one scene.
    pub fn separate(&self, mixture: &Waveform, eeg: &EegRecording) -> Result<Waveform> {
        let mut g = Graph::new(Mode::Eval);
        let y = self.forward(&mut g, &[mixture], &[eeg])?;
        let out = g.value(y).data().to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("extracted waveform".into()));
        }
        Ok(Waveform::new(out, mixture.sample_rate))
    }
}

fn check_inputs(mixtures: &[&Waveform], eeg: &[&EegRecording]) -> Result<usize> {
    let (Some(first), true) = (mixtures.first(), mixtures.len() == eeg.len()) else {
        return Err(Error::Dimension(format!(
            "{} mixtures with {} EEG recordings",
            mixtures.len(),
            eeg.len()
        )));
    };
    let t = first.len();
    for (m, e) in mixtures.iter().zip(eeg) {
        if m.len() != t || m.sample_rate != first.sample_rate {
            return Err(Error::Dimension(
                "batched mixtures differ in length or rate".into(),
            ));
        }
        if (e.duration() - m.duration()).abs() > 1.0 / e.sample_rate {
            return Err(Error::Alignment(format!(
                "EEG lasts {:.4} s but the mixture {:.4} s",
                e.duration(),
                m.duration()
            )))
            .stage("input");
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_scene, SynthConfig};
    use crate::metrics::si_sdr;

    fn tiny_config(electrodes: usize) -> ModelConfig {
        ModelConfig {
            codec: CodecConfig {
                channels: 16,
                ..Default::default()
            },
            eeg: EegConfig {
                electrodes,
                scale_filters: 2,
                temporal_features: 6,
                heads: 2,
                out_channels: 8,
                ..Default::default()
            },
            separator: SeparatorConfig {
                blocks: 1,
                chunk_size: 16,
                ..Default::default()
            },
        }
    }

    fn scene() -> crate::data::Scene {
        let cfg = SynthConfig {
            duration: 1.5,
            electrodes: 4,
            ..Default::default()
        };
        synth_scene(5, &cfg).unwrap()
    }

    #[test]
    fn output_matches_mixture_length_and_is_deterministic() {
        let s = scene();
        let m = Model::init(tiny_config(4), None, 1).unwrap();
        let a = m.separate(&s.mixture, &s.eeg).unwrap();
        let b = m.separate(&s.mixture, &s.eeg).unwrap();
        assert_eq!(a.len(), s.mixture.len());
        assert_eq!(a, b);
        assert!(si_sdr(&a.samples, &s.target.samples).unwrap().is_finite());
        let ragged = s.mixture.slice(0, 11993);
        let e = s.eeg.slice(0, 191);
        assert_eq!(m.separate(&ragged, &e).unwrap().len(), 11993);
    }

    #[test]
    fn misaligned_eeg_is_tagged() {
        let s = scene();
        let m = Model::init(tiny_config(4), None, 1).unwrap();
        let err = m.separate(&s.mixture, &s.eeg.slice(0, 64)).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "input", .. }));
        assert!(matches!(err.root(), Error::Alignment(_)));
    }

    #[test]
    fn stage_tag_on_electrode_mismatch() {
        let s = scene();
        let m = Model::init(tiny_config(6), None, 1).unwrap();
        let err = m.separate(&s.mixture, &s.eeg).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Stage {
                    stage: "eeg encoder",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn identity_model_keeps_the_mixture() {
        let s = scene();
        let m = Model::identity(ModelConfig::default()).unwrap();
        let y = m.separate(&s.mixture, &s.eeg).unwrap();
        let k = 20;
        for i in k..y.len() - k {
            assert!((y.samples[i] - s.mixture.samples[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.separator.blocks = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn problems_are_listed_together() {
        let mut c = ModelConfig::default();
        c.codec.stride = 0;
        c.separator.blocks = 0;
        assert_eq!(c.problems().len(), 2);
    }
}
