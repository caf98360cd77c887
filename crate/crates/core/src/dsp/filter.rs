//! Butterworth and notch biquad cascades, applied zero-phase.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Second-order section with `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

enum Kind {
    Lowpass,
    Highpass,
    Notch,
}

impl Biquad {
    fn design(kind: Kind, f0: f64, q: f64, fs: f64) -> Result<Biquad> {
        if !(f0 > 0.0 && f0 < fs / 2.0) || !(q > 0.0) {
            return Err(Error::Config(format!(
                "corner {f0} Hz (Q {q}) is not inside (0, {}) Hz",
                fs / 2.0
            )));
        }
        let w0 = 2.0 * PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match kind {
            Kind::Lowpass => [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            Kind::Highpass => [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            Kind::Notch => [1.0, -2.0 * c, 1.0],
        };
        let bq = Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        };
        bq.check_stable()?;
        Ok(bq)
    }

    fn check_stable(&self) -> Result<()> {
        let [a1, a2] = self.a;
        let ok = a2.abs() < 1.0
            && a1.abs() < 1.0 + a2
            && self.b.iter().chain(&self.a).all(|v| v.is_finite());
        if !ok {
            return Err(Error::Config(format!("unstable section a = {:?}", self.a)));
        }
        Ok(())
    }

    /// DC gain.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Quality factors of the conjugate pole pairs of an even-order Butterworth.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin()))
        .collect()
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "order {order} must be even and positive"
        )));
    }
    Ok(())
}

pub fn butter_lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>> {
    check_order(order)?;
    butterworth_qs(order)
        .into_iter()
        .map(|q| Biquad::design(Kind::Lowpass, cutoff, q, fs))
        .collect()
}

pub fn butter_highpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>> {
    check_order(order)?;
    butterworth_qs(order)
        .into_iter()
        .map(|q| Biquad::design(Kind::Highpass, cutoff, q, fs))
        .collect()
}

/// High-pass at `lo` cascaded with low-pass at `hi`, each of `order`.
pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Vec<Biquad>> {
    if !(lo < hi) {
        return Err(Error::Config(format!("band edges {lo} >= {hi}")));
    }
    if fs <= 2.0 * hi {
        return Err(Error::Config(format!(
            "sample rate {fs} Hz must exceed {} Hz",
            2.0 * hi
        )));
    }
    let mut s = butter_highpass(order, lo, fs)?;
    s.extend(butter_lowpass(order, hi, fs)?);
    Ok(s)
}

pub fn notch_filter(f0: f64, q: f64, fs: f64) -> Result<Vec<Biquad>> {
    Ok(vec![Biquad::design(Kind::Notch, f0, q, fs)?])
}

/// Causal cascade, each section initialised at its steady state for a
/// constant input equal to `x[0]`.
pub fn filter_cascade(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut level = x.first().copied().unwrap_or(0.0);
    for s in sections {
        let steady = s.dc_gain() * level;
        let mut z1 = steady - s.b[0] * level;
        let mut z2 = s.b[2] * level - s.a[1] * steady;
        for v in y.iter_mut() {
            let inp = *v;
            let out = s.b[0] * inp + z1;
            z1 = s.b[1] * inp - s.a[0] * out + z2;
            z2 = s.b[2] * inp - s.a[1] * out;
            *v = out;
        }
        level = steady;
    }
    y
}

fn reversed(x: &[f64]) -> Vec<f64> {
    x.iter().rev().copied().collect()
}

/// Zero-phase application: the mean of forward-backward and
/// backward-forward passes over an odd-extended signal. Commutes exactly
/// with time reversal. Length is preserved.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let fb = reversed(&filter_cascade(
        sections,
        &reversed(&filter_cascade(sections, &ext)),
    ));
    let bf = filter_cascade(
        sections,
        &reversed(&filter_cascade(sections, &reversed(&ext))),
    );
    fb[pad..pad + n]
        .iter()
        .zip(&bf[pad..pad + n])
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass(x: &[f64], fs: f64, lo: f64, hi: f64, order: usize) -> Result<Vec<f64>> {
    Ok(filtfilt(&butter_bandpass(order, lo, hi, fs)?, x))
}

/// Zero-phase notch at `f0` with quality factor `q`.
pub fn notch(x: &[f64], fs: f64, f0: f64, q: f64) -> Result<Vec<f64>> {
    Ok(filtfilt(&notch_filter(f0, q, fs)?, x))
}

/// Zero-phase Butterworth low-pass.
pub fn lowpass(x: &[f64], fs: f64, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    Ok(filtfilt(&butter_lowpass(order, cutoff, fs)?, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn butterworth_q_values() {
        let q = butterworth_qs(4);
        assert!((q[0] - 1.306_562_964_876_376_3).abs() < 1e-12);
        assert!((q[1] - 0.541_196_100_146_197).abs() < 1e-12);
    }

    #[test]
    fn bandpass_rejects_dc() {
        let y = bandpass(&vec![3.0; 1280], 128.0, 0.1, 45.0, 4).unwrap();
        assert!(
            y.iter().all(|v| v.abs() < 3e-3),
            "{}",
            y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        );
    }

    #[test]
    fn bandpass_passes_ten_hz() {
        let n = 128 * 60;
        let x = sine(10.0, 128.0, n);
        let y = bandpass(&x, 128.0, 0.1, 45.0, 4).unwrap();
        let mid = n / 4..3 * n / 4;
        let gain_db = 20.0 * (rms(&y[mid.clone()]) / rms(&x[mid])).log10();
        assert!(gain_db.abs() < 0.5, "{gain_db}");
    }

    #[test]
    fn notch_attenuates_fifty_hz() {
        let n = 128 * 30;
        let x = sine(50.0, 128.0, n);
        let y = notch(&x, 128.0, 50.0, 30.0).unwrap();
        let mid = n / 4..3 * n / 4;
        let att_db = 20.0 * (rms(&x[mid.clone()]) / rms(&y[mid])).log10();
        assert!(att_db >= 30.0, "{att_db}");
    }

    #[test]
    fn zero_phase_commutes_with_reversal() {
        let x: Vec<f64> = (0..700)
            .map(|i| ((i * 37 % 91) as f64 - 45.0) / 45.0)
            .collect();
        let sos = butter_bandpass(4, 0.1, 45.0, 128.0).unwrap();
        let a = reversed(&filtfilt(&sos, &x));
        let b = filtfilt(&sos, &reversed(&x));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_designs_are_config_errors() {
        assert!(matches!(
            butter_bandpass(4, 0.1, 45.0, 80.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            notch_filter(50.0, 30.0, 90.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            butter_lowpass(3, 10.0, 100.0),
            Err(Error::Config(_))
        ));
    }
}
