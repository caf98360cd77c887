//! STFT, canonical EEG band power and differential entropy.

use std::f64::consts::{E, PI};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Differential entropy floor on band power.
pub const DE_POWER_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandDef {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

pub const CANONICAL_BANDS: [BandDef; 5] = [
    BandDef {
        name: "delta",
        lo: 0.0,
        hi: 4.0,
    },
    BandDef {
        name: "theta",
        lo: 4.0,
        hi: 8.0,
    },
    BandDef {
        name: "alpha",
        lo: 8.0,
        hi: 12.0,
    },
    BandDef {
        name: "beta",
        lo: 12.0,
        hi: 30.0,
    },
    BandDef {
        name: "gamma",
        lo: 30.0,
        hi: 50.0,
    },
];

/// One-sided short-time spectrum.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    /// `frames x (window_len/2 + 1)`.
    pub frames: Vec<Vec<Complex64>>,
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: f64,
    window_energy: f64,
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

pub fn stft(x: &[f64], sample_rate: f64, window_len: usize, hop: usize) -> Result<Spectrogram> {
    if hop == 0 || window_len == 0 {
        return Err(Error::Config("window length and hop must be >= 1".into()));
    }
    if x.len() < window_len {
        return Err(Error::Length(format!(
            "signal of {} samples is shorter than one {window_len}-sample window",
            x.len()
        )));
    }
    let window = hann(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let bins = window_len / 2 + 1;
    let n_frames = (x.len() - window_len) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    for f in 0..n_frames {
        let seg = &x[f * hop..f * hop + window_len];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..bins].to_vec());
    }
    Ok(Spectrogram {
        frames,
        window_len,
        hop,
        sample_rate,
        window_energy: window.iter().map(|w| w * w).sum(),
    })
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.window_len as f64
    }

    /// Weight of bin `k` when folding the two-sided spectrum onto one side.
    fn fold_weight(&self, k: usize) -> f64 {
        if k == 0 || (self.window_len.is_multiple_of(2) && k == self.window_len / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Windowed-frame energy recovered from the one-sided spectrum.
    pub fn frame_energy(&self, frame: usize) -> f64 {
        self.frames[frame]
            .iter()
            .enumerate()
            .map(|(k, c)| self.fold_weight(k) * c.norm_sqr())
            .sum::<f64>()
            / self.window_len as f64
    }

    /// Power in `[lo, hi)` Hz, averaged over frames and normalized so that a
    /// unit-amplitude sinusoid carries a total power of 1/2.
    pub fn power_in(&self, lo: f64, hi: f64) -> Result<f64> {
        let ks: Vec<usize> = (0..self.bins())
            .filter(|&k| {
                let f = self.bin_freq(k);
                f >= lo && f < hi
            })
            .collect();
        if ks.is_empty() {
            return Err(Error::Config(format!(
                "band [{lo}, {hi}) Hz contains no bins at resolution {} Hz",
                self.sample_rate / self.window_len as f64
            )));
        }
        let norm = self.window_len as f64 * self.window_energy;
        let total: f64 = self
            .frames
            .iter()
            .map(|fr| {
                ks.iter()
                    .map(|&k| self.fold_weight(k) * fr[k].norm_sqr())
                    .sum::<f64>()
            })
            .sum();
        Ok(total / (norm * self.frames.len() as f64))
    }
}

/// Per-band power (one PSD row).
pub fn band_power(spec: &Spectrogram, bands: &[BandDef]) -> Result<Vec<f64>> {
    let top = bands.iter().fold(0.0f64, |m, b| m.max(b.hi));
    if spec.sample_rate < 2.0 * top {
        return Err(Error::Config(format!(
            "sample rate {} Hz cannot resolve bands up to {top} Hz",
            spec.sample_rate
        )));
    }
    bands.iter().map(|b| spec.power_in(b.lo, b.hi)).collect()
}

/// Gaussian differential entropy of each band power, `0.5 ln(2 pi e P)`.
pub fn differential_entropy(power: &[f64]) -> Vec<f64> {
    let c = 2.0 * PI * E;
    power
        .iter()
        .map(|&p| 0.5 * (c * p.max(DE_POWER_FLOOR)).ln())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn constant_signal_lives_in_bin_zero() {
        let spec = stft(&vec![1.5; 256], 128.0, 64, 32).unwrap();
        for fr in &spec.frames {
            let dc = fr[0].norm();
            // the window's own mainlobe spills into the first bins only
            assert!(fr[1].norm() < dc);
            for c in &fr[3..] {
                assert!(c.norm() < 1e-2 * dc);
            }
        }
    }

    #[test]
    fn ten_hz_peaks_at_bin_ten() {
        let spec = stft(&sine(10.0, 128.0, 512, 1.0), 128.0, 128, 64).unwrap();
        for fr in &spec.frames {
            let argmax = (0..fr.len())
                .max_by(|&a, &b| fr[a].norm().total_cmp(&fr[b].norm()))
                .unwrap();
            assert_eq!(argmax, 10);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let x: Vec<f64> = (0..300)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let spec = stft(&x, 128.0, 128, 64).unwrap();
        let w = hann(128);
        for f in 0..spec.frames.len() {
            let direct: f64 = x[f * 64..f * 64 + 128]
                .iter()
                .zip(&w)
                .map(|(a, b)| (a * b).powi(2))
                .sum();
            assert!((spec.frame_energy(f) - direct).abs() < 1e-10 * direct);
        }
    }

    #[test]
    fn short_signal_is_length_error() {
        assert!(matches!(
            stft(&[0.0; 10], 128.0, 128, 64),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn zero_signal_zero_power() {
        let spec = stft(&[0.0; 256], 128.0, 128, 64).unwrap();
        assert_eq!(band_power(&spec, &CANONICAL_BANDS).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn band_power_needs_resolvable_rate() {
        let spec = stft(&[0.0; 128], 64.0, 64, 32).unwrap();
        assert!(matches!(
            band_power(&spec, &CANONICAL_BANDS),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_band_is_config_error() {
        let spec = stft(&[0.0; 128], 128.0, 16, 8).unwrap();
        let narrow = [BandDef {
            name: "x",
            lo: 1.0,
            hi: 2.0,
        }];
        assert!(matches!(band_power(&spec, &narrow), Err(Error::Config(_))));
    }

    #[test]
    fn unit_sine_total_power_is_half() {
        let spec = stft(&sine(10.0, 128.0, 1024, 1.0), 128.0, 128, 64).unwrap();
        let p = spec.power_in(0.0, 64.1).unwrap();
        assert!((p - 0.5).abs() < 1e-3, "{p}");
    }

    #[test]
    fn de_closed_forms() {
        let c = 2.0 * PI * E;
        let de = differential_entropy(&[1.0 / c, 1.0, 0.0]);
        assert_eq!(de[0], 0.0);
        assert!((de[1] - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!(de[2].is_finite());
    }
}
