//! Rectify-and-smooth amplitude envelope.

use crate::dsp::filter::lowpass;
use crate::error::{Error, Result};

/// Full-wave rectification followed by a zero-phase second-order low-pass at
/// `smooth_hz`; negative undershoot is clipped to zero.
pub fn envelope(x: &[f64], fs: f64, smooth_hz: f64) -> Result<Vec<f64>> {
    if !(smooth_hz > 0.0 && smooth_hz < fs / 2.0) {
        return Err(Error::Config(format!(
            "smoothing cutoff {smooth_hz} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    let rect: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    Ok(lowpass(&rect, fs, smooth_hz, 2)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_in_zero_out() {
        assert!(envelope(&[0.0; 500], 1000.0, 10.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn sine_envelope_is_rectified_mean() {
        let fs = 8000.0;
        let amp = 0.8;
        let x: Vec<f64> = (0..16000)
            .map(|i| amp * (2.0 * PI * 200.0 * i as f64 / fs).sin())
            .collect();
        let e = envelope(&x, fs, 10.0).unwrap();
        let want = amp * 2.0 / PI;
        for v in &e[2000..14000] {
            assert!((v - want).abs() < 0.1 * want, "{v} vs {want}");
        }
    }

    #[test]
    fn positively_homogeneous() {
        let x: Vec<f64> = (0..2000)
            .map(|i| ((i * 13 % 29) as f64 - 14.0) / 7.0)
            .collect();
        let e1 = envelope(&x, 1000.0, 20.0).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.5 * v).collect();
        let e2 = envelope(&xs, 1000.0, 20.0).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert!((3.5 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
            assert!(*a >= 0.0);
        }
    }
}
