//! Temporal (multi-scale convolution) and frequency (band PSD + DE) views.

use rand::Rng;

use crate::dsp::{band_power, differential_entropy, stft, CANONICAL_BANDS};
use crate::error::{Error, Result};
use crate::nn::layers::{self, init_batch_norm, init_pointwise};
use crate::nn::{uniform_fan_in, Conv1dSpec, Graph, ParamRegistry, Var};
use crate::signal::EegRecording;
use crate::tensor::Tensor;

pub const NUM_SCALES: usize = 5;
/// PSD and DE per band.
pub const FREQ_FEATURES: usize = 2 * CANONICAL_BANDS.len();

/// Kernel widths `round(0.5^k fs)` for `k = 1..=5`.
pub fn scale_widths(fs: f64) -> Result<Vec<usize>> {
    let widths: Vec<usize> = (1..=NUM_SCALES as i32)
        .map(|k| (0.5f64.powi(k) * fs).round() as usize)
        .collect();
    if widths.contains(&0) || widths.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Config(format!(
            "sample rate {fs} Hz gives degenerate temporal kernels {widths:?}"
        )));
    }
    Ok(widths)
}

fn scale_name(k: usize) -> String {
    format!("eeg.temporal.scale{k}")
}

pub const REDUCE_WEIGHT: &str = "eeg.temporal.reduce.weight";

pub fn init_multiscale(
    reg: &mut ParamRegistry,
    fs: f64,
    filters: usize,
    out_features: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for (k, w) in scale_widths(fs)?.into_iter().enumerate() {
        let p = scale_name(k + 1);
        reg.insert_param(
            &format!("{p}.weight"),
            uniform_fan_in(rng, &[filters, 1, w], w),
        )?;
        init_batch_norm(reg, &format!("{p}.bn"), filters)?;
    }
    init_pointwise(reg, REDUCE_WEIGHT, out_features, NUM_SCALES * filters, rng)
}

/// `(B, C_e, T_e)` raw EEG to `(B, C_e, D_T, T_e)` temporal features.
pub fn multiscale_temporal(g: &mut Graph, reg: &ParamRegistry, fs: f64, eeg: Var) -> Result<Var> {
    let shape = g.shape(eeg).to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "EEG batch must be (B, C, T), got {shape:?}"
        )));
    }
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    let widths = scale_widths(fs)?;
    if t < widths[0] {
        return Err(Error::Length(format!(
            "EEG of {t} samples is shorter than the {}-sample kernel",
            widths[0]
        )));
    }
    let x = g.reshape(eeg, &[b * c, 1, t])?;
    let mut branches = Vec::with_capacity(NUM_SCALES);
    for (k, &w) in widths.iter().enumerate() {
        let p = scale_name(k + 1);
        let kernel = g.param(reg, &format!("{p}.weight"))?;
        let y = g.conv1d(x, kernel, Conv1dSpec::same(w, 1))?;
        branches.push(layers::bn_elu(g, reg, &format!("{p}.bn"), y, 1)?);
    }
    let cat = g.concat(&branches, 1)?;
    let reduced = layers::pointwise(g, reg, REDUCE_WEIGHT, cat)?;
    let d = g.shape(reduced)[1];
    g.reshape(reduced, &[b, c, d, t])
}

/// Per electrode: five band powers then their differential entropies,
/// from 1 s Hann frames with 50% overlap.
pub fn frequency_features(eeg: &EegRecording) -> Result<Tensor> {
    let fs = eeg.sample_rate;
    if fs < 100.0 {
        return Err(Error::Config(format!(
            "frequency features need fs >= 100 Hz, got {fs}"
        )));
    }
    let win = fs.round() as usize;
    let hop = (win / 2).max(1);
    let mut out = Vec::with_capacity(eeg.num_channels() * FREQ_FEATURES);
    for ch in &eeg.channels {
        let spec = stft(ch, fs, win, hop)?;
        let psd = band_power(&spec, &CANONICAL_BANDS)?;
        let de = differential_entropy(&psd);
        out.extend(psd);
        out.extend(de);
    }
    Tensor::new(&[eeg.num_channels(), FREQ_FEATURES], out)
}
