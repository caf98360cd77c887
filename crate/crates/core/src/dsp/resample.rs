//! Windowed-sinc sample-rate conversion.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side.
const ZERO_CROSSINGS: f64 = 16.0;
/// Passband edge as a fraction of the lower Nyquist rate.
const ROLLOFF: f64 = 0.94;

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Output length is `round(len * to / from)`. Each output sample is a
/// normalized windowed-sinc combination of its neighbours, so constants are
/// reproduced everywhere, edges included.
pub fn resample(x: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    if !(from > 0.0 && to > 0.0) {
        return Err(Error::Config(format!(
            "sample rates must be positive ({from} -> {to})"
        )));
    }
    let out_len = (x.len() as f64 * to / from).round() as usize;
    if x.is_empty() {
        return Ok(vec![0.0; out_len]);
    }
    if (from - to).abs() < f64::EPSILON * from {
        return Ok(x.to_vec());
    }
    let ratio = from / to;
    // cutoff in cycles per input sample
    let fc = 0.5 * ROLLOFF * (to / from).min(1.0);
    let half_width = ZERO_CROSSINGS / (2.0 * fc);
    let n = x.len() as isize;
    let out = (0..out_len)
        .map(|j| {
            let t = j as f64 * ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for i in lo..=hi {
                let d = t - i as f64;
                let w = sinc(2.0 * fc * d) * blackman(d / half_width);
                acc += w * x[i as usize];
                wsum += w;
            }
            if wsum.abs() < 1e-300 {
                0.0
            } else {
                acc / wsum
            }
        })
        .collect();
    Ok(out)
}
