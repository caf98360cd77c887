//! Shared fixtures for the criterion benches.

use tfga_core::codec::CodecConfig;
use tfga_core::eeg::EegConfig;
use tfga_core::separator::SeparatorConfig;
use tfga_core::train::ModelConfig;
use tfga_core::Tensor;

/// Deterministic values in `[-1, 1)`.
pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let h = (i as u64 ^ salt).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 11;
        h as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// The overfit-probe architecture: C = 32, C_EEG = 16, R = 2.
pub fn probe_model() -> ModelConfig {
    ModelConfig {
        codec: CodecConfig {
            channels: 32,
            ..Default::default()
        },
        eeg: EegConfig {
            out_channels: 16,
            ..Default::default()
        },
        separator: SeparatorConfig {
            blocks: 2,
            ..Default::default()
        },
    }
}
