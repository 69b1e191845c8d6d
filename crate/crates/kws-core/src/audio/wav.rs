//! Minimal RIFF/WAVE reader and writer for the dataset's clip format:
//! PCM, 16-bit signed little-endian, mono, 16 kHz. Anything else is
//! rejected with a descriptive error rather than resampled.

use std::io::Write;
use std::path::Path;

use crate::audio::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

fn le_u16(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn le_u32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Parse a WAV file already loaded into memory.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavFormat("not a RIFF/WAVE file".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;

    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = le_u32(bytes, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        match (id, body_end) {
            (b"fmt ", Some(end)) => {
                if size < 16 {
                    return Err(Error::WavFormat("fmt chunk too short".into()));
                }
                fmt = Some((
                    le_u16(bytes, body_start),
                    le_u16(bytes, body_start + 2),
                    le_u32(bytes, body_start + 4),
                    le_u16(bytes, body_start + 14),
                ));
                let _ = end;
            }
            (b"data", Some(end)) => {
                data = Some(&bytes[body_start..end]);
            }
            (_, Some(_)) => {} // skip LIST, fact, ...
            (_, None) => return Err(Error::WavFormat("chunk extends past end of file".into())),
        }
        // chunks are word-aligned
        off = body_start + size + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::WavFormat("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::WavFormat(format!(
            "unsupported audio format tag {format}; only PCM (1) is accepted"
        )));
    }
    if channels != 1 {
        return Err(Error::WavFormat(format!(
            "expected mono audio, got {channels} channels"
        )));
    }
    if bits != 16 {
        return Err(Error::WavFormat(format!(
            "expected 16-bit samples, got {bits}-bit"
        )));
    }
    if rate != SAMPLE_RATE_HZ {
        return Err(Error::WavFormat(format!(
            "expected {SAMPLE_RATE_HZ} Hz sample rate, got {rate} Hz (resampling is out of scope)"
        )));
    }

    let data = data.ok_or_else(|| Error::WavFormat("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    Ok(AudioBuffer::new(samples))
}

/// Read a WAV file from disk.
pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::WavFormat(format!("{}: {e}", path.display())))?;
    parse_wav(&bytes).map_err(|e| Error::WavFormat(format!("{}: {e}", path.display())))
}

/// Write a mono 16 kHz 16-bit PCM WAV file. Samples are clamped to [-1, 1].
pub fn write_wav<P: AsRef<Path>>(path: P, buf: &AudioBuffer) -> Result<()> {
    let n = buf.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE_HZ.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE_HZ * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &buf.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
