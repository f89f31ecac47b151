//! Mono waveform type, 16-bit PCM WAV codec, and band-limited resampling.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Canonical sample rate for the whole pipeline.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// A mono signal with its sample rate. Samples are nominally in
/// `[-1.0, 1.0]`; the codec clamps on write, and transforms that can
/// overshoot clamp their own output.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::arg("waveform must contain at least one sample"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::arg("sample_rate_hz must be positive"));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::arg("waveform samples must be finite"));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        let sum_sq: f64 = self.samples.iter().map(|s| s * s).sum();
        (sum_sq / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.abs()).fold(0.0, f64::max)
    }
}

fn read_u16(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn read_u32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Read a RIFF/WAVE file holding 16-bit PCM. Multichannel input takes
/// channel 0. Extra chunks before `data` are skipped.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, path)
}

fn decode_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::wav(path, "missing RIFF/WAVE header"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(Error::wav(path, format!("truncated chunk {:?}", id)));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::wav(path, "fmt chunk too short"));
                }
                fmt = Some((
                    read_u16(bytes, body),
                    read_u16(bytes, body + 2),
                    read_u32(bytes, body + 4),
                    read_u16(bytes, body + 14),
                ));
            }
            b"data" => {
                let (format, channels, rate, bits) = fmt
                    .ok_or_else(|| Error::wav(path, "data chunk before fmt chunk"))?;
                if format != 1 {
                    return Err(Error::wav(
                        path,
                        format!("unsupported encoding: format code {format} (want PCM=1)"),
                    ));
                }
                if bits != 16 {
                    return Err(Error::wav(
                        path,
                        format!("unsupported bit depth {bits} (want 16)"),
                    ));
                }
                if channels == 0 {
                    return Err(Error::wav(path, "zero channels"));
                }
                let frame_bytes = 2 * channels as usize;
                let n_frames = size / frame_bytes;
                if n_frames == 0 {
                    return Err(Error::wav(path, "empty data payload"));
                }
                // channel 0 only
                let mut samples = Vec::with_capacity(n_frames);
                for i in 0..n_frames {
                    let off = body + i * frame_bytes;
                    let pcm = i16::from_le_bytes([bytes[off], bytes[off + 1]]);
                    samples.push(pcm as f64 / 32768.0);
                }
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word-aligned
        pos = body + size + (size & 1);
    }
    Err(Error::wav(path, "no data chunk found"))
}

/// Write 16-bit mono PCM: word = clamp(round(sample * 32768), -32768, 32767).
/// Together with the divide-by-32768 read this makes round trips
/// PCM-word-exact and bounds the float error by 1/32768 per sample.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&pcm16(s).to_le_bytes());
    }
    out
}

pub(crate) fn pcm16(sample: f64) -> i16 {
    let scaled = (sample * 32768.0).round();
    scaled.clamp(-32768.0, 32767.0) as i16
}

const SINC_HALF_WIDTH: usize = 32;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Blackman window on [-1, 1].
fn blackman(x: f64) -> f64 {
    let px = std::f64::consts::PI * x;
    0.42 + 0.5 * px.cos() + 0.08 * (2.0 * px).cos()
}

/// Windowed-sinc resampling by `factor` in [0.5, 2.0]. Output length is
/// `round(len / factor)`; the declared sample rate is unchanged, so a
/// factor > 1 shifts content up in frequency. Output is clamped to
/// [-1, 1] (sinc interpolation can overshoot slightly).
pub fn resample(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::arg(format!(
            "resample factor {factor} outside [0.5, 2.0]"
        )));
    }
    let n_in = w.samples.len();
    let n_out = ((n_in as f64 / factor).round() as usize).max(1);
    // low-pass at the narrower of the two Nyquists
    let cutoff = (1.0 / factor).min(1.0);
    let half = SINC_HALF_WIDTH as f64;
    let src = &w.samples;
    let out: Vec<f64> = (0..n_out)
        .map(|i| {
            let t = i as f64 * factor;
            let j0 = (t - half).ceil() as i64;
            let j1 = (t + half).floor() as i64;
            let mut acc = 0.0;
            for j in j0..=j1 {
                if j < 0 || j >= n_in as i64 {
                    continue;
                }
                let u = t - j as f64;
                acc += src[j as usize] * cutoff * sinc(cutoff * u) * blackman(u / half);
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(out, w.sample_rate_hz)
}
