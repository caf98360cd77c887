//! Separation quality metrics and the training objective.

pub mod report;
pub mod sisdr;
pub mod stoi;

pub use report::{AggregateRow, MetricReport, MetricRow, SceneReport, Stat};
pub use sisdr::{si_sdr, si_sdr_loss, SI_SDR_CAP_DB};
pub use stoi::{estoi, stoi};
