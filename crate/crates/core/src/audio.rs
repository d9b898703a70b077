//! WAV reading and writing.
//!
//! Supports RIFF WAV with 16-bit integer PCM or 32-bit IEEE float samples,
//! mono or stereo. Stereo is downmixed to mono by the channel mean. Integer
//! samples are scaled to [-1, 1] by dividing by 32768; float samples are
//! clamped into [-1, 1].

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded audio clip: mono samples in [-1, 1] plus the source rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::WavFormat {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn parse_fmt(path: &Path, chunk: &[u8]) -> Result<FmtChunk> {
    if chunk.len() < 16 {
        return Err(err(path, "fmt chunk too short"));
    }
    let mut format = read_u16(chunk, 0);
    let channels = read_u16(chunk, 2);
    let sample_rate = read_u32(chunk, 4);
    let bits_per_sample = read_u16(chunk, 14);
    if format == FORMAT_EXTENSIBLE {
        // First two bytes of the SubFormat GUID carry the real format code.
        if chunk.len() < 26 {
            return Err(err(path, "extensible fmt chunk too short"));
        }
        format = read_u16(chunk, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits_per_sample,
    })
}

/// Decode a WAV file held in memory.
pub fn clip_from_wav_bytes(path: &Path, bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size);
        if body_end > bytes.len() {
            return Err(err(path, "truncated chunk"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(path, body)?),
            b"data" => {
                data = Some(body);
                break;
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| err(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| err(path, "missing data chunk"))?;

    if fmt.channels != 1 && fmt.channels != 2 {
        return Err(err(path, format!("{} channels; only mono/stereo supported", fmt.channels)));
    }
    let channels = fmt.channels as usize;

    let interleaved: Vec<f32> = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]).clamp(-1.0, 1.0))
            .collect(),
        (format, bits) => {
            return Err(err(
                path,
                format!("format code {format} at {bits} bits; only 16-bit PCM and 32-bit float supported"),
            ))
        }
    };

    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) / 2.0)
            .collect()
    };

    if samples.is_empty() {
        return Err(err(path, "empty data chunk"));
    }

    Ok(AudioClip {
        samples,
        sample_rate: fmt.sample_rate,
    })
}

/// Read and decode a WAV file.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    clip_from_wav_bytes(path, &bytes)
}

/// Encode a clip as mono 16-bit PCM WAV bytes.
///
/// Samples are scaled by 32768 and clamped to the i16 range, so a read of
/// the written file reproduces each sample within half a quantization step
/// (one step at positive full scale).
pub fn wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let n = clip.samples.len();
    let data_len = n * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let v = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write a clip to disk as mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    fs::write(path, wav_bytes(clip)).map_err(|e| Error::io(path, e))
}

/// Encode a clip as mono 32-bit IEEE float WAV bytes (lossless for f32
/// samples; used by the mix cache so cached and in-memory mixtures agree
/// bit for bit).
pub fn wav_bytes_f32(clip: &AudioClip) -> Vec<u8> {
    let n = clip.samples.len();
    let data_len = n * 4;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_IEEE_FLOAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 4).to_le_bytes()); // byte rate
    out.extend_from_slice(&4u16.to_le_bytes()); // block align
    out.extend_from_slice(&32u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}
