//! Synthetic two-talker scenes with surrogate EEG.
//!
//! Talkers are harmonic pseudo-speech: syllables of 120-300 ms separated by
//! short pauses, each with its own pitch contour and three formant peaks.
//! The surrogate EEG is a stand-in with no physiological claim: every
//! channel carries the attended talker's envelope with a positive gain, plus
//! an alpha-band oscillation and white noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{envelope, resample};
use crate::error::{Error, Result};
use crate::signal::{EegRecording, Waveform};

/// Envelope smoothing before the EEG projection.
const ENVELOPE_HZ: f64 = 8.0;
/// Peak level of the mixture.
const PEAK: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub fs_audio: f64,
    pub fs_eeg: f64,
    /// Seconds.
    pub duration: f64,
    pub electrodes: usize,
    pub sir_db: f64,
    pub eeg_snr_db: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fs_audio: 8000.0,
            fs_eeg: 128.0,
            duration: 4.0,
            electrodes: 16,
            sir_db: 0.0,
            eeg_snr_db: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration < 1.0 {
            return Err(Error::Config(format!(
                "scene duration {} s is below 1 s",
                self.duration
            )));
        }
        if self.electrodes < 2 {
            return Err(Error::Config(
                "scenes need at least two EEG channels".into(),
            ));
        }
        if !(self.fs_audio >= 1000.0) || !(self.fs_eeg > 0.0) || self.fs_eeg >= self.fs_audio {
            return Err(Error::Config(format!(
                "sample rates {} Hz (audio) / {} Hz (EEG) are invalid",
                self.fs_audio, self.fs_eeg
            )));
        }
        if !self.sir_db.is_finite() || !self.eeg_snr_db.is_finite() {
            return Err(Error::Config("SIR and EEG SNR must be finite".into()));
        }
        Ok(())
    }

    pub fn audio_len(&self) -> usize {
        (self.duration * self.fs_audio).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ear {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub mixture: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
    pub eeg: EegRecording,
    pub attended_ear: Ear,
    pub seed: u64,
}

impl Scene {
    /// Audio and EEG cut to the same time span; `eeg_start` and `eeg_len`
    /// are in EEG samples and must map onto whole audio samples.
    pub fn crop(&self, eeg_start: usize, eeg_len: usize) -> Result<Scene> {
        let ratio = self.mixture.sample_rate / self.eeg.sample_rate;
        let a0 = eeg_start as f64 * ratio;
        let an = eeg_len as f64 * ratio;
        if a0.fract() != 0.0 || an.fract() != 0.0 {
            return Err(Error::Alignment(format!(
                "EEG span {eeg_start}+{eeg_len} does not land on audio samples"
            )));
        }
        let (a0, an) = (a0 as usize, an as usize);
        if eeg_start + eeg_len > self.eeg.num_samples() || a0 + an > self.mixture.len() {
            return Err(Error::Length("crop exceeds scene".into()));
        }
        Ok(Scene {
            id: self.id.clone(),
            mixture: self.mixture.slice(a0, an),
            target: self.target.slice(a0, an),
            interferer: self.interferer.slice(a0, an),
            eeg: self.eeg.slice(eeg_start, eeg_len),
            attended_ear: self.attended_ear,
            seed: self.seed,
        })
    }
}

/// Harmonic pseudo-speech of `n` samples around pitch `f0`, peak-normalized.
pub fn pseudo_speech(rng: &mut impl Rng, fs: f64, n: usize, f0: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let dur = (rng.gen_range(0.12..0.3) * fs) as usize;
        let gap = (rng.gen_range(0.02..0.06) * fs) as usize;
        let m = dur.min(n - start);
        let amp = rng.gen_range(0.5..1.0);
        let pitch = f0 * rng.gen_range(0.85..1.15);
        let vibrato = rng.gen_range(2.0..5.0);
        let formants = [
            rng.gen_range(300.0..900.0),
            rng.gen_range(900.0..2500.0),
            rng.gen_range(2500.0..3500.0),
        ];
        let harmonics: Vec<(f64, f64)> = (1..40)
            .map(|h| h as f64)
            .take_while(|h| h * pitch < 0.45 * fs)
            .map(|h| {
                let gain: f64 = formants
                    .iter()
                    .map(|f| (-0.5 * ((h * pitch - f) / 150.0).powi(2)).exp())
                    .sum::<f64>()
                    + 0.05;
                (h, gain / h.sqrt())
            })
            .collect();
        let mut phase = 0.0;
        for i in 0..m {
            let t = i as f64 / fs;
            let inst = pitch * (1.0 + 0.05 * (2.0 * PI * vibrato * t).sin());
            phase += 2.0 * PI * inst / fs;
            let env = (PI * i as f64 / dur as f64).sin().sqrt();
            let s: f64 = harmonics.iter().map(|(h, g)| g * (h * phase).sin()).sum();
            out[start + i] = amp * env * s;
        }
        start += dur + gap;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Zero-mean, unit-variance envelope of `x` at the EEG rate.
pub fn eeg_envelope(x: &[f64], fs_audio: f64, fs_eeg: f64) -> Result<Vec<f64>> {
    let env = envelope(x, fs_audio, ENVELOPE_HZ)?;
    let mut e = resample(&env, fs_audio, fs_eeg)?;
    let m = e.iter().sum::<f64>() / e.len() as f64;
    let sd = variance(&e).sqrt();
    e.iter_mut()
        .for_each(|v| *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 });
    Ok(e)
}

/// Deterministic scene for `seed`.
pub fn synth_scene(seed: u64, cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.audio_len();
    let fs = cfg.fs_audio;
    let f0_target = rng.gen_range(100.0..140.0);
    let target = pseudo_speech(&mut rng, fs, n, f0_target);
    let f0_interferer = rng.gen_range(180.0..240.0);
    let interferer = pseudo_speech(&mut rng, fs, n, f0_interferer);

    let et: f64 = target.iter().map(|v| v * v).sum();
    let ei: f64 = interferer.iter().map(|v| v * v).sum();
    let g = (et / (ei * 10f64.powf(cfg.sir_db / 10.0))).sqrt();
    let interferer: Vec<f64> = interferer.iter().map(|v| v * g).collect();
    let mix: Vec<f64> = target.iter().zip(&interferer).map(|(a, b)| a + b).collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = if peak > 0.0 { PEAK / peak } else { 1.0 };
    let scale = |x: &[f64]| x.iter().map(|v| v * norm).collect::<Vec<f64>>();
    let (target, interferer) = (scale(&target), scale(&interferer));
    let mixture: Vec<f64> = target.iter().zip(&interferer).map(|(a, b)| a + b).collect();

    let env = eeg_envelope(&target, fs, cfg.fs_eeg)?;
    let noise_power = 10f64.powf(-cfg.eeg_snr_db / 10.0);
    let white = Normal::new(0.0, (noise_power / 2.0).sqrt()).expect("finite std");
    let alpha_amp = noise_power.sqrt();
    let channels: Vec<Vec<f64>> = (0..cfg.electrodes)
        .map(|_| {
            let gain: f64 = rng.gen_range(0.5..1.5);
            let freq: f64 = rng.gen_range(9.0..11.0);
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            env.iter()
                .enumerate()
                .map(|(i, e)| {
                    let t = i as f64 / cfg.fs_eeg;
                    gain * (e
                        + alpha_amp * (2.0 * PI * freq * t + phase).sin()
                        + white.sample(&mut rng))
                })
                .collect()
        })
        .collect();
    let eeg = EegRecording::new(channels, cfg.fs_eeg)?;
    let attended_ear = if rng.gen_bool(0.5) {
        Ear::Left
    } else {
        Ear::Right
    };

    Ok(Scene {
        id: format!("scene{seed:05}"),
        mixture: Waveform::new(mixture, fs),
        target: Waveform::new(target, fs),
        interferer: Waveform::new(interferer, fs),
        eeg,
        attended_ear,
        seed,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            duration: 2.0,
            electrodes: 8,
            sir_db: 3.0,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_scene(3, &cfg()).unwrap();
        let b = synth_scene(3, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.target, synth_scene(4, &cfg()).unwrap().target);
    }

    #[test]
    fn mixture_is_sum_at_requested_sir() {
        let s = synth_scene(1, &cfg()).unwrap();
        for ((m, t), i) in s
            .mixture
            .samples
            .iter()
            .zip(&s.target.samples)
            .zip(&s.interferer.samples)
        {
            assert!((m - t - i).abs() < 1e-9);
        }
        let sir = 10.0 * (s.target.energy() / s.interferer.energy()).log10();
        assert!((sir - 3.0).abs() < 0.1, "{sir}");
        assert!(s.mixture.samples.iter().all(|v| v.abs() <= PEAK + 1e-12));
    }

    #[test]
    fn eeg_tracks_target_envelope() {
        for seed in 0..3 {
            let s = synth_scene(seed, &cfg()).unwrap();
            assert_eq!(s.eeg.num_samples(), 256);
            let env = eeg_envelope(&s.target.samples, 8000.0, 128.0).unwrap();
            let mean: Vec<f64> = (0..256)
                .map(|t| s.eeg.channels.iter().map(|c| c[t]).sum::<f64>() / 8.0)
                .collect();
            assert!(pearson(&mean, &env) >= 0.6);
        }
    }

    #[test]
    fn crop_stays_aligned() {
        let s = synth_scene(2, &cfg()).unwrap();
        let c = s.crop(2, 128).unwrap();
        assert_eq!(c.mixture.len(), 8000);
        assert_eq!(c.eeg.num_samples(), 128);
        assert_eq!(c.target.samples[0], s.target.samples[125]);
        assert!(matches!(s.crop(1, 128), Err(Error::Alignment(_))));
    }

    #[test]
    fn invalid_configs() {
        let short = SynthConfig {
            duration: 0.5,
            ..cfg()
        };
        assert!(matches!(synth_scene(0, &short), Err(Error::Config(_))));
        let one = SynthConfig {
            electrodes: 1,
            ..cfg()
        };
        assert!(synth_scene(0, &one).is_err());
    }
}
