//! Train/validation/test splits and on-disk scene collections.
//!
//! Layout: `ROOT/manifest.json` plus `ROOT/scenes/<id>/` holding
//! `mixture.wav`, `target.wav`, `interferer.wav` (float32), `eeg.bin` and
//! `scene.json`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::eeg_io::{read_eeg, write_eeg};
use crate::data::synth::{synth_scene, Ear, Scene, SynthConfig};
use crate::data::wav::{read_wav, write_wav, WavEncoding};
use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.75, 0.125, 0.125];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Seeded shuffle, then contiguous train / validation / test blocks.
/// Validation and test sizes are rounded; train takes the remainder.
pub fn make_splits(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<SplitManifest> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be >= 0 and sum to 1"
        )));
    }
    let used = fractions.iter().filter(|&&f| f > 0.0).count();
    if ids.len() < used {
        return Err(Error::Config(format!(
            "{} scenes cannot fill {used} non-empty splits",
            ids.len()
        )));
    }
    let n = ids.len();
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = |f: f64| {
        if f > 0.0 {
            ((n as f64 * f).round() as usize).max(1)
        } else {
            0
        }
    };
    let n_val = count(fractions[1]);
    let n_test = count(fractions[2]);
    if n_val + n_test > n || (fractions[0] > 0.0 && n_val + n_test == n) {
        return Err(Error::Config(format!(
            "{n} scenes are too few for fractions {fractions:?}"
        )));
    }
    let n_train = n - n_val - n_test;
    Ok(SplitManifest {
        fractions,
        seed,
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SceneMeta {
    id: String,
    seed: u64,
    attended_ear: Ear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub synth: SynthConfig,
    pub splits: SplitManifest,
}

fn scene_dir(root: &Path, id: &str) -> PathBuf {
    root.join("scenes").join(id)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_scene(root: &Path, scene: &Scene) -> Result<()> {
    let dir = scene_dir(root, &scene.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_wav(
        &dir.join("mixture.wav"),
        &scene.mixture,
        WavEncoding::Float32,
    )?;
    write_wav(&dir.join("target.wav"), &scene.target, WavEncoding::Float32)?;
    write_wav(
        &dir.join("interferer.wav"),
        &scene.interferer,
        WavEncoding::Float32,
    )?;
    write_eeg(&dir.join("eeg.bin"), &scene.eeg)?;
    write_json(
        &dir.join("scene.json"),
        &SceneMeta {
            id: scene.id.clone(),
            seed: scene.seed,
            attended_ear: scene.attended_ear,
        },
    )
}

pub fn load_scene(root: &Path, id: &str) -> Result<Scene> {
    let dir = scene_dir(root, id);
    let meta: SceneMeta = read_json(&dir.join("scene.json"))?;
    let mixture = read_wav(&dir.join("mixture.wav"))?;
    let target = read_wav(&dir.join("target.wav"))?;
    let interferer = read_wav(&dir.join("interferer.wav"))?;
    let eeg = read_eeg(&dir.join("eeg.bin"))?;
    if target.len() != mixture.len() || interferer.len() != mixture.len() {
        return Err(Error::Validation(format!(
            "scene {id}: waveform lengths differ"
        )));
    }
    let audio_secs = mixture.duration();
    if (eeg.duration() - audio_secs).abs() > 1.0 / eeg.sample_rate {
        return Err(Error::Alignment(format!(
            "scene {id}: EEG lasts {} s, audio {audio_secs} s",
            eeg.duration()
        )));
    }
    Ok(Scene {
        id: meta.id,
        mixture,
        target,
        interferer,
        eeg,
        attended_ear: meta.attended_ear,
        seed: meta.seed,
    })
}

/// Per-scene seed derived from the dataset seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Generates `n` scenes and their split manifest under `root`.
pub fn synth_dataset(
    root: &Path,
    n: usize,
    seed: u64,
    cfg: &SynthConfig,
    fractions: [f64; 3],
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::Config("need at least one scene".into()));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("scene{i:04}")).collect();
    let splits = make_splits(&ids, fractions, seed)?;
    for (i, id) in ids.iter().enumerate() {
        let mut scene = synth_scene(scene_seed(seed, i), cfg)?;
        scene.id = id.clone();
        save_scene(root, &scene)?;
    }
    let manifest = DatasetManifest {
        synth: cfg.clone(),
        splits,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let path = root.join("manifest.json");
        if !path.exists() {
            return Err(Error::Config(format!(
                "no dataset manifest at {}",
                path.display()
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest: read_json(&path)?,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Scene>> {
        self.manifest
            .splits
            .ids(split)
            .iter()
            .map(|id| load_scene(&self.root, id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn sixteen_scenes_split_twelve_two_two() {
        let m = make_splits(&ids(16), DEFAULT_FRACTIONS, 7).unwrap();
        assert_eq!(
            (m.train.len(), m.validation.len(), m.test.len()),
            (12, 2, 2)
        );
        assert_eq!(m, make_splits(&ids(16), DEFAULT_FRACTIONS, 7).unwrap());
    }

    #[test]
    fn all_train_and_too_few() {
        let m = make_splits(&ids(3), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(m.train.len(), 3);
        assert!(matches!(
            make_splits(&ids(2), DEFAULT_FRACTIONS, 1),
            Err(Error::Config(_))
        ));
        assert!(make_splits(&ids(4), [0.5, 0.2, 0.2], 1).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 3usize..60, a in 1u32..8, b in 0u32..4, c in 0u32..4, seed in 0u64..1000) {
            let tot = (a + b + c) as f64;
            let f = [a as f64 / tot, b as f64 / tot, 1.0 - a as f64 / tot - b as f64 / tot];
            if let Ok(m) = make_splits(&ids(n), f, seed) {
                let all: Vec<&String> = m.train.iter().chain(&m.validation).chain(&m.test).collect();
                let set: BTreeSet<&String> = all.iter().copied().collect();
                prop_assert_eq!(all.len(), n);
                prop_assert_eq!(set.len(), n);
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            duration: 1.0,
            electrodes: 4,
            ..Default::default()
        };
        let m = synth_dataset(dir.path(), 4, 3, &cfg, [0.5, 0.25, 0.25]).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        let test = ds.load_split(Split::Test).unwrap();
        assert_eq!(test.len(), 1);
        let idx: usize = test[0].id[5..].parse().unwrap();
        let fresh = synth_scene(scene_seed(3, idx), &cfg).unwrap();
        let f32ish = |x: &[f64]| x.iter().map(|v| *v as f32 as f64).collect::<Vec<_>>();
        assert_eq!(test[0].mixture.samples, f32ish(&fresh.mixture.samples));
        assert_eq!(test[0].eeg.channels[2], f32ish(&fresh.eeg.channels[2]));
    }
}
