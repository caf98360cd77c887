//! Deterministic signal processing.

pub mod envelope;
pub mod filter;
pub mod resample;
pub mod spectral;

pub use envelope::envelope;
pub use filter::{bandpass, filtfilt, lowpass, notch};
pub use resample::resample;
pub use spectral::{band_power, differential_entropy, stft, BandDef, Spectrogram, CANONICAL_BANDS};
