//! Run configuration: TOML file, `key=value` overrides and sweeps.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use tfga_core::train::TrainConfig;

pub const RUN_ROOT_ENV: &str = "TFGA_RUN_ROOT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory written by `tfga synth`.
    pub dir: Option<PathBuf>,
    /// Electrode positions; defaults to the montage stored with the EEG.
    pub montage: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Falls back to `$TFGA_RUN_ROOT`, then `runs`.
    pub root: Option<PathBuf>,
    pub name: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            root: None,
            name: "run".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub run: RunSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow!("config {}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn run_root(&self) -> PathBuf {
        self.run
            .root
            .clone()
            .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Applies `key=value`; `value` is read as a TOML literal, or as a bare
    /// string when that fails. Keys may omit the `train.` or `train.model.`
    /// prefix.
    pub fn apply_override(&mut self, spec: &str) -> anyhow::Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("override {spec:?} is not key=value"))?;
        let path = qualify(key.trim());
        let value = parse_value(raw.trim());
        let mut tree = toml::Value::try_from(&*self).expect("run config converts to TOML");
        set_path(&mut tree, &path, value).with_context(|| format!("override {spec:?}"))?;
        *self = tree
            .try_into()
            .map_err(|e| anyhow!("override {spec:?}: {e}"))?;
        Ok(())
    }

    /// Every problem that would stop a training run, without touching data.
    pub fn problems(&self) -> Vec<String> {
        let mut p: Vec<String> = self.train.problems();
        match &self.data.dir {
            None => p.push("data.dir is not set".into()),
            Some(d) if !d.join("manifest.json").is_file() => p.push(format!(
                "data.dir {} has no manifest.json (run `tfga synth` first)",
                d.display()
            )),
            Some(_) => {}
        }
        if let Some(m) = &self.data.montage {
            if !m.is_file() {
                p.push(format!("data.montage {} does not exist", m.display()));
            }
        }
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) {
            p.push(format!(
                "run.name {:?} must be a plain directory name",
                self.run.name
            ));
        }
        p
    }
}

fn qualify(key: &str) -> Vec<String> {
    let parts: Vec<String> = key.split('.').map(String::from).collect();
    let prefix: &[&str] = match parts[0].as_str() {
        "data" | "run" | "train" => &[],
        "codec" | "eeg" | "separator" => &["train", "model"],
        _ => &["train"],
    };
    prefix.iter().map(|s| s.to_string()).chain(parts).collect()
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut node = tree;
    for p in parents {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(p))
            .ok_or_else(|| anyhow!("unknown config section {:?}", path.join(".")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| anyhow!("{} is not a section", parents.join(".")))?;
    table.insert(last.clone(), value);
    Ok(())
}

/// `key=a..b` (inclusive integer range) or `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> anyhow::Result<(String, Vec<String>)> {
    let (key, vals) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("sweep {spec:?} is not key=values"))?;
    let values: Vec<String> = if let Some((a, b)) = vals.split_once("..") {
        let a: i64 = a
            .trim()
            .parse()
            .with_context(|| format!("sweep start in {spec:?}"))?;
        let b: i64 = b
            .trim()
            .parse()
            .with_context(|| format!("sweep end in {spec:?}"))?;
        if b < a {
            bail!("sweep range {a}..{b} is empty");
        }
        (a..=b).map(|v| v.to_string()).collect()
    } else {
        vals.split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect()
    };
    if values.is_empty() {
        bail!("sweep {spec:?} has no values");
    }
    Ok((key.trim().to_string(), values))
}
