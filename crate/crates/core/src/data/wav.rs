//! WAV I/O (PCM-16 and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Waveform;

const PCM16_SCALE: f64 = 32767.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn format_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Every channel as its own waveform, samples in `[-1, 1]`.
pub fn read_wav_channels(path: &Path) -> Result<Vec<Waveform>> {
    let reader = WavReader::open(path).map_err(|e| format_err(path, e))?;
    let spec = reader.spec();
    let fs = spec.sample_rate as f64;
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| (v as f64 / PCM16_SCALE).max(-1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    Ok((0..nch)
        .map(|c| {
            Waveform::new(
                interleaved.iter().skip(c).step_by(nch).copied().collect(),
                fs,
            )
        })
        .collect())
}

/// Mono file; multichannel files must go through [`read_wav_channels`].
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut chans = read_wav_channels(path)?;
    if chans.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            chans.len()
        )));
    }
    Ok(chans.remove(0))
}

/// Channels must share length and sample rate.
pub fn write_wav_channels(path: &Path, channels: &[Waveform], encoding: WavEncoding) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Validation("no channels to write".into()))?;
    if channels
        .iter()
        .any(|c| c.len() != first.len() || c.sample_rate != first.sample_rate)
    {
        return Err(Error::Validation(
            "WAV channels differ in length or rate".into(),
        ));
    }
    if first.sample_rate.fract() != 0.0 || first.sample_rate <= 0.0 {
        return Err(Error::Validation(format!(
            "WAV needs an integral sample rate, got {}",
            first.sample_rate
        )));
    }
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: first.sample_rate as u32,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| format_err(path, e))?;
    for i in 0..first.len() {
        for c in channels {
            let v = c.samples[i];
            match encoding {
                WavEncoding::Pcm16 => {
                    w.write_sample((v.clamp(-1.0, 1.0) * PCM16_SCALE).round() as i16)
                }
                WavEncoding::Float32 => w.write_sample(v as f32),
            }
            .map_err(|e| format_err(path, e))?;
        }
    }
    w.finalize().map_err(|e| format_err(path, e))
}

pub fn write_wav(path: &Path, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    write_wav_channels(path, std::slice::from_ref(w), encoding)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| ((i as f64 * 0.05).sin() * 0.8) as f32 as f64)
                .collect(),
            8000.0,
        )
    }

    #[test]
    fn float_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = tone(500);
        write_wav(&p, &w, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }

    #[test]
    fn pcm16_round_trip_within_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let mut w = tone(500);
        w.samples[0] = 1.0;
        w.samples[1] = -1.0;
        write_wav(&p, &w, WavEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn stereo_channels_separate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let l = tone(100);
        let r = l.scaled(-0.5);
        write_wav_channels(&p, &[l.clone(), r.clone()], WavEncoding::Float32).unwrap();
        let ch = read_wav_channels(&p).unwrap();
        assert_eq!(ch, vec![l, r]);
        assert!(matches!(read_wav(&p), Err(Error::Format(_))));
    }

    #[test]
    fn garbage_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFFnot really a wave file").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format(_))));
    }
}
