//! Audio and EEG files, synthetic scenes and dataset splits.

pub mod dataset;
pub mod eeg_io;
pub mod synth;
pub mod wav;

pub use dataset::{
    load_scene, make_splits, save_scene, synth_dataset, Dataset, DatasetManifest, Split,
    SplitManifest, DEFAULT_FRACTIONS,
};
pub use eeg_io::{read_eeg, write_eeg};
pub use synth::{synth_scene, Ear, Scene, SynthConfig};
pub use wav::{read_wav, read_wav_channels, write_wav, write_wav_channels, WavEncoding};
