//! Short-time objective intelligibility (STOI) and its extended variant.
//!
//! Constants follow the standard definition: 10 kHz analysis rate,
//! 256-sample frames with 50% overlap, 512-point FFT, 15 third-octave bands
//! from 150 Hz, 30-frame (384 ms) segments, -15 dB clipping and removal of
//! frames more than 40 dB below the loudest reference frame.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::resample;
use crate::error::{Error, Result};

pub const STOI_FS: f64 = 10_000.0;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Hann window without its zero endpoints.
fn window() -> Vec<f64> {
    let n = FRAME + 2;
    (1..=FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Drops frames of both signals where the reference is more than the
/// dynamic range below its loudest frame, then overlap-adds the rest.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let frames = |s: &[f64]| -> Vec<Vec<f64>> {
        frame_starts(s.len())
            .map(|i| s[i..i + FRAME].iter().zip(w).map(|(a, b)| a * b).collect())
            .collect()
    };
    let (xf, yf) = (frames(x), frames(y));
    let energy: Vec<f64> = xf.iter().map(|f| 20.0 * (norm(f) + EPS).log10()).collect();
    let top = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len())
        .filter(|&i| top - DYN_RANGE_DB - energy[i] < 0.0)
        .collect();
    let ola = |fr: &[Vec<f64>]| -> Vec<f64> {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * HOP + FRAME];
        for (k, &i) in keep.iter().enumerate() {
            for (o, v) in out[k * HOP..k * HOP + FRAME].iter_mut().zip(&fr[i]) {
                *o += v;
            }
        }
        out
    };
    (ola(&xf), ola(&yf))
}

/// Bin ranges `[lo, hi)` of the third-octave bands on the one-sided FFT grid.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freq = |k: usize| k as f64 * STOI_FS / NFFT as f64;
    let nearest = |f: f64| {
        (0..bins)
            .min_by(|&a, &b| (freq(a) - f).powi(2).total_cmp(&(freq(b) - f).powi(2)))
            .unwrap()
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Third-octave band magnitudes, `bands x frames`.
fn band_envelopes(x: &[f64], w: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let mut out = vec![Vec::new(); bands.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for i in frame_starts(x.len()) {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for (b, (s, wv)) in buf.iter_mut().zip(x[i..i + FRAME].iter().zip(w)) {
            *b = Complex64::new(s * wv, 0.0);
        }
        fft.process(&mut buf);
        for (row, &(lo, hi)) in out.iter_mut().zip(bands) {
            row.push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

fn centered_unit(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
    let n = norm(v) + EPS;
    v.iter_mut().for_each(|x| *x /= n);
}

fn prepare(est: &[f64], reference: &[f64], fs: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if est.len() != reference.len() {
        return Err(Error::Length(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let (x, y) = if fs == STOI_FS {
        (reference.to_vec(), est.to_vec())
    } else {
        (
            resample(reference, fs, STOI_FS)?,
            resample(est, fs, STOI_FS)?,
        )
    };
    let w = window();
    let (x, y) = remove_silent_frames(&x, &y, &w);
    let bands = third_octave_bins();
    let xt = band_envelopes(&x, &w, &bands);
    let yt = band_envelopes(&y, &w, &bands);
    if xt[0].len() < SEGMENT {
        return Err(Error::Length(format!(
            "{} active frames after silence removal, need {SEGMENT}",
            xt[0].len()
        )));
    }
    Ok((xt, yt))
}

/// Raw STOI in `[-1, 1]`; `est` and `reference` at `fs`.
pub fn stoi(est: &[f64], reference: &[f64], fs: f64) -> Result<f64> {
    let (xt, yt) = prepare(est, reference, fs)?;
    let frames = xt[0].len();
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let segments = frames - SEGMENT + 1;
    let mut total = 0.0;
    for m in SEGMENT..=frames {
        for (xr, yr) in xt.iter().zip(&yt) {
            let xs = &xr[m - SEGMENT..m];
            let ys = &yr[m - SEGMENT..m];
            let gain = norm(xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(yv, xv)| (yv * gain).min(xv * clip))
                .collect();
            let mut xc = xs.to_vec();
            centered_unit(&mut yp);
            centered_unit(&mut xc);
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (BANDS * segments) as f64)
}

/// Row (time) then column (band) normalization of one `bands x SEGMENT` block.
fn row_col_normalize(block: &mut [Vec<f64>]) {
    for row in block.iter_mut() {
        centered_unit(row);
    }
    for t in 0..SEGMENT {
        let mut col: Vec<f64> = block.iter().map(|r| r[t]).collect();
        centered_unit(&mut col);
        for (r, v) in block.iter_mut().zip(col) {
            r[t] = v;
        }
    }
}

/// Raw ESTOI in `[-1, 1]`.
pub fn estoi(est: &[f64], reference: &[f64], fs: f64) -> Result<f64> {
    let (xt, yt) = prepare(est, reference, fs)?;
    let frames = xt[0].len();
    let segments = frames - SEGMENT + 1;
    let mut total = 0.0;
    for m in SEGMENT..=frames {
        let mut xb: Vec<Vec<f64>> = xt.iter().map(|r| r[m - SEGMENT..m].to_vec()).collect();
        let mut yb: Vec<Vec<f64>> = yt.iter().map(|r| r[m - SEGMENT..m].to_vec()).collect();
        row_col_normalize(&mut xb);
        row_col_normalize(&mut yb);
        let s: f64 = xb
            .iter()
            .zip(&yb)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>())
            .sum();
        total += s / SEGMENT as f64;
    }
    Ok(total / segments as f64)
}
