//! Per-scene and aggregate metric records.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{estoi, si_sdr, stoi};

/// Scores of one signal against the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub si_sdr: f64,
    /// Relative to the unprocessed mixture.
    pub si_sdri: f64,
    /// Clamped to `[0, 1]`.
    pub stoi: f64,
    pub estoi: f64,
}

impl MetricRow {
    /// Scores `est` against `target`, with the mixture as the SI-SDRi baseline.
    pub fn compute(est: &[f64], target: &[f64], mixture: &[f64], fs: f64) -> Result<MetricRow> {
        let base = si_sdr(mixture, target)?;
        let s = si_sdr(est, target)?;
        Ok(MetricRow {
            si_sdr: s,
            si_sdri: s - base,
            stoi: stoi(est, target, fs)?.clamp(0.0, 1.0),
            estoi: estoi(est, target, fs)?.clamp(0.0, 1.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: String,
    pub mixture: MetricRow,
    pub model: MetricRow,
}

/// Population mean and standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub si_sdr: Stat,
    pub si_sdri: Stat,
    pub stoi: Stat,
    pub estoi: Stat,
}

impl AggregateRow {
    pub fn of<'a>(rows: impl Iterator<Item = &'a MetricRow> + Clone) -> AggregateRow {
        let col = |f: fn(&MetricRow) -> f64| Stat::of(&rows.clone().map(f).collect::<Vec<_>>());
        AggregateRow {
            si_sdr: col(|r| r.si_sdr),
            si_sdri: col(|r| r.si_sdri),
            stoi: col(|r| r.stoi),
            estoi: col(|r| r.estoi),
        }
    }
}

/// Per-scene rows plus aggregates for the unprocessed mixture and the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenes: Vec<SceneReport>,
    pub mixture: AggregateRow,
    pub model: AggregateRow,
}

impl MetricReport {
    pub fn from_scenes(scenes: Vec<SceneReport>) -> MetricReport {
        let mixture = AggregateRow::of(scenes.iter().map(|s| &s.mixture));
        let model = AggregateRow::of(scenes.iter().map(|s| &s.model));
        MetricReport {
            scenes,
            mixture,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    /// Fixed-width summary with one line per system.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>16} {:>16} {:>14} {:>14}\n",
            "system", "SI-SDR (dB)", "SI-SDRi (dB)", "STOI", "ESTOI"
        );
        for (name, row) in [("mixture", &self.mixture), ("model", &self.model)] {
            let cell = |s: &Stat, p: usize| format!("{:.p$} ± {:.p$}", s.mean, s.std);
            out.push_str(&format!(
                "{:<8} {:>16} {:>16} {:>14} {:>14}\n",
                name,
                cell(&row.si_sdr, 2),
                cell(&row.si_sdri, 2),
                cell(&row.stoi, 3),
                cell(&row.estoi, 3)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64) -> MetricRow {
        MetricRow {
            si_sdr: x,
            si_sdri: x - 1.0,
            stoi: 0.5,
            estoi: 0.25,
        }
    }

    #[test]
    fn aggregates_are_exact_means() {
        let scenes: Vec<SceneReport> = [1.0, 2.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| SceneReport {
                scene: format!("s{i}"),
                mixture: row(0.0),
                model: row(x),
            })
            .collect();
        let r = MetricReport::from_scenes(scenes);
        assert_eq!(r.model.si_sdr.mean, 3.0);
        assert_eq!(r.model.si_sdri.mean, 2.0);
        assert_eq!(r.mixture.si_sdr.std, 0.0);
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.table().contains("mixture"));
    }
}
