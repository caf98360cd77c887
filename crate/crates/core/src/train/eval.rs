//! Scene-level evaluation with the unprocessed-mixture baseline.

use crate::data::Scene;
use crate::error::Result;
use crate::metrics::{MetricReport, MetricRow, SceneReport};
use crate::train::model::Model;

/// Metrics of the model output and of the raw mixture, per scene and
/// aggregated.
pub fn evaluate(model: &Model, scenes: &[Scene]) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(scenes.len());
    for s in scenes {
        let fs = s.mixture.sample_rate;
        let (x, t) = (&s.mixture.samples, &s.target.samples);
        let est = model.separate(&s.mixture, &s.eeg)?;
        rows.push(SceneReport {
            scene: s.id.clone(),
            mixture: MetricRow::compute(x, t, x, fs)?,
            model: MetricRow::compute(&est.samples, t, x, fs)?,
        });
    }
    Ok(MetricReport::from_scenes(rows))
}
