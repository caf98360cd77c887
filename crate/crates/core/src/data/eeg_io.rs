//! EEG container: a text header padded with spaces to a multiple of 128
//! bytes, followed by little-endian `f32` samples, channel-major.
//!
//! ```text
//! TFGA-EEG 1
//! channels 2
//! sample_rate 128
//! samples 256
//! names Fz Cz
//! electrode Fz 0 0.7 0.7      (optional, one per channel)
//! end
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{EegRecording, Electrode};

const MAGIC: &str = "TFGA-EEG 1";
const ALIGN: usize = 128;

fn encode_header(rec: &EegRecording) -> Result<Vec<u8>> {
    if rec
        .names
        .iter()
        .any(|n| n.is_empty() || n.contains(char::is_whitespace))
    {
        return Err(Error::Validation(
            "channel names must be non-empty without whitespace".into(),
        ));
    }
    let mut h = format!(
        "{MAGIC}\nchannels {}\nsample_rate {}\nsamples {}\nnames {}\n",
        rec.num_channels(),
        rec.sample_rate,
        rec.num_samples(),
        rec.names.join(" ")
    );
    if let Some(m) = &rec.montage {
        for e in m {
            let [x, y, z] = e.position;
            h.push_str(&format!("electrode {} {x} {y} {z}\n", e.name));
        }
    }
    h.push_str("end\n");
    let mut bytes = h.into_bytes();
    let padded = bytes.len().div_ceil(ALIGN) * ALIGN;
    bytes.resize(padded, b' ');
    Ok(bytes)
}

pub fn eeg_to_bytes(rec: &EegRecording) -> Result<Vec<u8>> {
    let mut out = encode_header(rec)?;
    for ch in &rec.channels {
        for &v in ch {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Format(format!("EEG header ends before `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected `{key}` in EEG header, got {line:?}")))
}

fn number<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad `{key}` value {s:?}")))
}

pub fn eeg_from_bytes(bytes: &[u8]) -> Result<EegRecording> {
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .map(|p| p + 1)
        .ok_or_else(|| Error::Format("EEG header has no `end` line".into()))?;
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("EEG header is not UTF-8".into()))?;
    let payload_at = (end + 4).div_ceil(ALIGN) * ALIGN;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format(
            "not an EEG container (bad magic line)".into(),
        ));
    }
    let c: usize = number(field(&mut lines, "channels")?, "channels")?;
    let fs: f64 = number(field(&mut lines, "sample_rate")?, "sample_rate")?;
    let t: usize = number(field(&mut lines, "samples")?, "samples")?;
    let names: Vec<String> = field(&mut lines, "names")?
        .split_whitespace()
        .map(String::from)
        .collect();
    let mut montage = Vec::new();
    for line in lines {
        let rest = line
            .strip_prefix("electrode ")
            .ok_or_else(|| Error::Format(format!("unexpected EEG header line {line:?}")))?;
        let f: Vec<&str> = rest.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("bad electrode line {line:?}")));
        }
        montage.push(Electrode {
            name: f[0].to_string(),
            position: [number(f[1], "x")?, number(f[2], "y")?, number(f[3], "z")?],
        });
    }
    let expected = c * t * 4;
    let payload = bytes.get(payload_at..).unwrap_or(&[]);
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "EEG payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let channels: Vec<Vec<f64>> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect::<Vec<_>>()
        .chunks(t.max(1))
        .map(|c| c.to_vec())
        .collect();
    let channels = if t == 0 {
        vec![Vec::new(); c]
    } else {
        channels
    };
    let mut rec =
        EegRecording::with_names(channels, fs, names).map_err(|e| Error::Format(e.to_string()))?;
    if !montage.is_empty() {
        if montage.len() != c || montage.iter().zip(&rec.names).any(|(e, n)| &e.name != n) {
            return Err(Error::Format(
                "electrode lines do not match channel names".into(),
            ));
        }
        rec.montage = Some(montage);
    }
    Ok(rec)
}

pub fn write_eeg(path: &Path, rec: &EegRecording) -> Result<()> {
    std::fs::write(path, eeg_to_bytes(rec)?).map_err(|e| Error::io(path, e))
}

pub fn read_eeg(path: &Path) -> Result<EegRecording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    eeg_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: usize, t: usize) -> EegRecording {
        let channels = (0..c)
            .map(|k| {
                (0..t)
                    .map(|i| ((i * (k + 3)) as f32 * 0.01).sin() as f64)
                    .collect()
            })
            .collect();
        EegRecording::new(channels, 128.0).unwrap()
    }

    #[test]
    fn payload_size_and_alignment() {
        let bytes = eeg_to_bytes(&rec(4, 256)).unwrap();
        let header_len = bytes.len() - 4096;
        assert_eq!(header_len % 128, 0);
        let back = eeg_from_bytes(&bytes).unwrap();
        assert_eq!(back.num_channels(), 4);
        assert_eq!(back.num_samples(), 256);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.eeg");
        let mut r = rec(3, 100);
        r.montage = Some(
            r.names
                .iter()
                .enumerate()
                .map(|(i, n)| Electrode {
                    name: n.clone(),
                    position: [i as f64, 0.5, -1.25],
                })
                .collect(),
        );
        write_eeg(&p, &r).unwrap();
        assert_eq!(read_eeg(&p).unwrap(), r);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let mut bytes = eeg_to_bytes(&rec(4, 256)).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(eeg_from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(eeg_from_bytes(b"hello"), Err(Error::Format(_))));
    }
}
