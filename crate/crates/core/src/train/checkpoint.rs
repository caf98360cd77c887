//! Checkpoint container.
//!
//! ```text
//! TFGA-CKPT 1\n
//! u64 LE header length
//! JSON header (model config, config hash, epoch, step, tensor table)
//! f32 LE payload, tensors in table order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamRegistry};
use crate::tensor::Tensor;
use crate::train::model::{Model, ModelConfig};
use crate::train::optim::Adam;

const MAGIC: &[u8] = b"TFGA-CKPT 1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Slot {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    slot: Slot,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    model: ModelConfig,
    epoch: usize,
    step: usize,
    adam_t: u64,
    tensors: Vec<TensorMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamRegistry,
    pub optimizer: Adam,
    pub epoch: usize,
    pub step: usize,
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer: &Adam, epoch: usize, step: usize) -> Checkpoint {
        Checkpoint {
            model: model.config.clone(),
            params: model.params.clone(),
            optimizer: optimizer.clone(),
            epoch,
            step,
        }
    }

    pub fn config_hash(&self) -> String {
        self.model.hash()
    }

    /// Refuses a run configuration whose model section differs.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        let (have, want) = (self.config_hash(), config.hash());
        if have != want {
            return Err(Error::Validation(format!(
                "checkpoint was trained with model config {} but the run config hashes to {}; \
                 architecture settings (codec, eeg, separator) must match",
                &have[..12],
                &want[..12]
            )));
        }
        Ok(())
    }

    pub fn into_model(self) -> Model {
        let mut params = self.params;
        params.zero_grads();
        Model {
            config: self.model,
            params,
            unit_mask: false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(TensorMeta, &Tensor)> = Vec::new();
        for (name, e) in self.params.iter() {
            let slot = match e.kind {
                ParamKind::Trainable => Slot::Param,
                ParamKind::Buffer => Slot::Buffer,
            };
            tensors.push((meta(name, &e.value, slot), &e.value));
        }
        for (slot, map) in [
            (Slot::AdamM, &self.optimizer.m),
            (Slot::AdamV, &self.optimizer.v),
        ] {
            for (name, t) in map {
                tensors.push((meta(name, t, slot), t));
            }
        }
        let mut payload = Vec::new();
        for (_, t) in &tensors {
            for v in t.data() {
                payload.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let header = Header {
            config_hash: self.config_hash(),
            model: self.model.clone(),
            epoch: self.epoch,
            step: self.step,
            adam_t: self.optimizer.t,
            tensors: tensors.into_iter().map(|(m, _)| m).collect(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format("not a checkpoint (bad magic)".into()))?;
        if rest.len() < 8 {
            return Err(Error::Format(
                "checkpoint truncated in header length".into(),
            ));
        }
        let hlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let json = rest
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Format("checkpoint truncated in header".into()))?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let hash = header.model.hash();
        if hash != header.config_hash {
            return Err(Error::Format(format!(
                "checkpoint config hash {} does not match its model config ({hash})",
                header.config_hash
            )));
        }
        let payload = &rest[8 + hlen..];
        let total: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        if payload.len() != total * 4 {
            return Err(Error::Format(format!(
                "checkpoint payload has {} bytes, table implies {}",
                payload.len(),
                total * 4
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        let mut params = ParamRegistry::new();
        let mut optimizer = Adam {
            t: header.adam_t,
            ..Default::default()
        };
        for m in header.tensors {
            let n = m.shape.iter().product();
            let t = Tensor::new(&m.shape, values.by_ref().take(n).collect())?;
            match m.slot {
                Slot::Param => params.insert_param(&m.name, t)?,
                Slot::Buffer => params.insert_buffer(&m.name, t)?,
                Slot::AdamM => {
                    optimizer.m.insert(m.name, t);
                }
                Slot::AdamV => {
                    optimizer.v.insert(m.name, t);
                }
            }
        }
        Ok(Checkpoint {
            model: header.model,
            params,
            optimizer,
            epoch: header.epoch,
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn meta(name: &str, t: &Tensor, slot: Slot) -> TensorMeta {
    TensorMeta {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        slot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::data::synth::{synth_scene, SynthConfig};
    use crate::eeg::EegConfig;
    use crate::separator::SeparatorConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            codec: CodecConfig {
                channels: 8,
                ..Default::default()
            },
            eeg: EegConfig {
                electrodes: 4,
                scale_filters: 2,
                temporal_features: 6,
                heads: 2,
                out_channels: 4,
                ..Default::default()
            },
            separator: SeparatorConfig {
                blocks: 1,
                chunk_size: 16,
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip_reproduces_forward_exactly() {
        let cfg = SynthConfig {
            duration: 1.0,
            electrodes: 4,
            ..Default::default()
        };
        let s = synth_scene(2, &cfg).unwrap();
        let model = Model::init(tiny(), None, 3).unwrap();
        let mut opt = Adam::default();
        let mut stepped = model.clone();
        for (_, e) in stepped.params.iter_mut() {
            e.grad = e.value.map(|v| v.sin());
        }
        opt.step(&mut stepped.params, 1e-3);
        let ck = Checkpoint::capture(&stepped, &opt, 4, 17);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.epoch, 4);
        assert_eq!(back.step, 17);
        assert_eq!(back.optimizer, opt);
        let before = stepped.separate(&s.mixture, &s.eeg).unwrap();
        let after = back.into_model().separate(&s.mixture, &s.eeg).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupted_or_mismatched_checkpoints_are_refused() {
        let model = Model::init(tiny(), None, 3).unwrap();
        let ck = Checkpoint::capture(&model, &Adam::default(), 0, 0);
        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"junk"),
            Err(Error::Format(_))
        ));

        let mut other = tiny();
        other.separator.blocks = 2;
        assert!(matches!(ck.check_config(&other), Err(Error::Validation(_))));
        ck.check_config(&tiny()).unwrap();

        let mut bytes = ck.to_bytes();
        let hash = ck.config_hash();
        let at = bytes
            .windows(64)
            .position(|w| w == hash.as_bytes())
            .unwrap();
        bytes[at..at + 64].copy_from_slice(&[b'0'; 64]);
        assert!(
            matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(m)) if m.contains("hash"))
        );
    }
}
