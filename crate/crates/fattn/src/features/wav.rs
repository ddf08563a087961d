//! 16-bit PCM mono WAV ingestion. Anything else is rejected with a
//! clear error rather than resampled or converted.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FattnError, Result};
use crate::features::Waveform;

fn take<const N: usize>(buf: &[u8], pos: usize) -> Result<[u8; N]> {
    buf.get(pos..pos + N)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| FattnError::BadFormat("truncated wav".into()))
}

/// Parse a RIFF/WAVE byte buffer. Requires PCM format 1, one channel,
/// 16 bits per sample. Samples are scaled to [-1, 1) as f64.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(FattnError::BadFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id: [u8; 4] = take(bytes, pos)?;
        let size = u32::from_le_bytes(take(bytes, pos + 4)?) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(FattnError::BadFormat("chunk overruns file".into()));
        }
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(FattnError::BadFormat("fmt chunk too small".into()));
                }
                let audio_format = u16::from_le_bytes(take(bytes, body_start)?);
                let channels = u16::from_le_bytes(take(bytes, body_start + 2)?);
                let sample_rate = u32::from_le_bytes(take(bytes, body_start + 4)?);
                let bits = u16::from_le_bytes(take(bytes, body_start + 14)?);
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }
    let (audio_format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| FattnError::BadFormat("missing fmt chunk".into()))?;
    if audio_format != 1 {
        return Err(FattnError::BadFormat(format!(
            "unsupported wav encoding {audio_format}, need PCM"
        )));
    }
    if channels != 1 {
        return Err(FattnError::BadFormat(format!(
            "unsupported channel count {channels}, need mono"
        )));
    }
    if bits != 16 {
        return Err(FattnError::BadFormat(format!(
            "unsupported bit depth {bits}, need 16"
        )));
    }
    let data = data.ok_or_else(|| FattnError::BadFormat("missing data chunk".into()))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, sample_rate))
}

pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<Waveform> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

/// Write a waveform as 16-bit PCM mono, clamping to [-1, 1).
pub fn write_wav<P: AsRef<Path>>(path: P, w: &Waveform) -> Result<()> {
    let mut out = Vec::with_capacity(44 + 2 * w.samples.len());
    let data_len = (2 * w.samples.len()) as u32;
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 0.999_969_482_421_875) * 32768.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}
