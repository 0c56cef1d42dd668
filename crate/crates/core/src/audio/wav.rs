//! Minimal RIFF/WAVE reader and writer.
//!
//! The reader accepts the formats that occur in the corpora this crate
//! targets: PCM at 8, 16 or 24 bits, and 32-bit IEEE float, including the
//! WAVE_FORMAT_EXTENSIBLE framing that some encoders emit. Multi-channel
//! files are averaged down to mono. Integer samples are scaled to `[-1, 1)`
//! by `2^(bits-1)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::atomic_write;

use super::Clip;

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_IEEE_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Reads a WAV file and averages its channels into a mono [`Clip`].
pub fn load_wav(path: &Path) -> Result<Clip> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes).map_err(|e| Error::audio(format!("{}: {e}", path.display())))
}

fn decode_wav(bytes: &[u8]) -> std::result::Result<Clip, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }

    let mut fmt: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format!("chunk '{}' truncated", String::from_utf8_lossy(id)))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {} // fact, LIST, cue, ... — irrelevant here
        }
        // Chunks are word-aligned: odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or("missing fmt chunk")?;
    let data = data.ok_or("missing data chunk")?;
    decode_samples(&fmt, data)
}

struct Format {
    code: u16,
    channels: usize,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> std::result::Result<Format, String> {
    if body.len() < 16 {
        return Err("fmt chunk shorter than 16 bytes".into());
    }
    let mut code = u16::from_le_bytes([body[0], body[1]]);
    let channels = u16::from_le_bytes([body[2], body[3]]) as usize;
    let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
    let bits = u16::from_le_bytes([body[14], body[15]]);
    if code == FORMAT_EXTENSIBLE {
        // The real format code is the leading u16 of the 16-byte sub-format
        // GUID, which sits after cbSize, wValidBitsPerSample and the channel
        // mask.
        if body.len() < 26 {
            return Err("extensible fmt chunk truncated".into());
        }
        code = u16::from_le_bytes([body[24], body[25]]);
    }
    if channels == 0 {
        return Err("zero channels".into());
    }
    if sample_rate == 0 {
        return Err("zero sample rate".into());
    }
    Ok(Format { code, channels, sample_rate, bits })
}

fn decode_samples(fmt: &Format, data: &[u8]) -> std::result::Result<Clip, String> {
    let bytes_per_sample = match (fmt.code, fmt.bits) {
        (FORMAT_PCM, 8) => 1,
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (code, bits) => {
            return Err(format!("unsupported codec: format {code:#06x} at {bits} bits"))
        }
    };
    let frame_bytes = bytes_per_sample * fmt.channels;
    if data.len() % frame_bytes != 0 {
        return Err(format!(
            "data chunk length {} is not a whole number of {frame_bytes}-byte frames",
            data.len()
        ));
    }

    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(frame_bytes) {
        let mut acc = 0.0;
        for ch in frame.chunks_exact(bytes_per_sample) {
            acc += match (fmt.code, fmt.bits) {
                (FORMAT_PCM, 8) => (ch[0] as f64 - 128.0) / 128.0,
                (FORMAT_PCM, 16) => i16::from_le_bytes([ch[0], ch[1]]) as f64 / 32768.0,
                (FORMAT_PCM, 24) => {
                    // Sign-extend the 24-bit little-endian value through i32.
                    let raw = (ch[0] as i32) | ((ch[1] as i32) << 8) | ((ch[2] as i8 as i32) << 16);
                    raw as f64 / 8_388_608.0
                }
                (FORMAT_IEEE_FLOAT, 32) => {
                    f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64
                }
                _ => unreachable!("codec vetted above"),
            };
        }
        samples.push(acc / fmt.channels as f64);
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(format!("non-finite sample {v}"));
    }
    Ok(Clip { samples, sample_rate: fmt.sample_rate })
}

/// Writes samples as a mono 16-bit PCM WAV file. Values are clamped to
/// `[-1, 1]` and quantized by `2^15`.
pub fn write_wav_mono16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let data_len = samples.len() * 2;
    let mut bytes = Vec::with_capacity(44 + data_len);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // channels
    bytes.extend_from_slice(&sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in samples {
        let q = (v.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    atomic_write(path, &bytes)
}
