//! Waveforms and multichannel EEG recordings.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, c: f64) -> Waveform {
        Waveform::new(
            self.samples.iter().map(|v| v * c).collect(),
            self.sample_rate,
        )
    }

    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        Waveform::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }
}

/// Electrode name with a 3-D position.
#[derive(Clone, Debug, PartialEq)]
pub struct Electrode {
    pub name: String,
    pub position: [f64; 3],
}

pub type Montage = Vec<Electrode>;

/// `C x T` matrix stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub names: Vec<String>,
    pub montage: Option<Montage>,
}

impl EegRecording {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        let names = (0..channels.len()).map(|i| format!("ch{i}")).collect();
        Self::with_names(channels, sample_rate, names)
    }

    pub fn with_names(
        channels: Vec<Vec<f64>>,
        sample_rate: f64,
        names: Vec<String>,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Validation("EEG recording without channels".into()));
        }
        let t = channels[0].len();
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::Validation("EEG channels differ in length".into()));
        }
        if names.len() != channels.len() {
            return Err(Error::Validation(format!(
                "{} names for {} channels",
                names.len(),
                channels.len()
            )));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::Validation("EEG sample rate must be positive".into()));
        }
        Ok(EegRecording {
            channels,
            sample_rate,
            names,
            montage: None,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate
    }

    pub fn slice(&self, start: usize, len: usize) -> EegRecording {
        EegRecording {
            channels: self
                .channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
            sample_rate: self.sample_rate,
            names: self.names.clone(),
            montage: self.montage.clone(),
        }
    }

    pub fn channel_waveform(&self, c: usize) -> Waveform {
        Waveform::new(self.channels[c].clone(), self.sample_rate)
    }
}
