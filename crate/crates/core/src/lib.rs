pub mod codec;
pub mod data;
pub mod dsp;
pub mod eeg;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod nn;
pub mod separator;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use signal::{EegRecording, Waveform};
pub use tensor::Tensor;
