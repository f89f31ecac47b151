//! Waveform transform family: pitch, additive noise, band rejection, time
//! masking, and reverberation from image-source room impulse responses.
//!
//! All transforms preserve the sample rate; all except `pitch_shift`
//! preserve length. Randomized transforms take an explicit RNG so a batch
//! can fan out with one independent stream per item.

use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio_io::{resample, Waveform};
use crate::error::{Error, Result};
use crate::par;

pub const PITCH_CENTS_MAX: f64 = 300.0;
pub const SNR_DB_MIN: f64 = 0.0;
pub const SNR_DB_MAX: f64 = 40.0;
pub const BAND_WIDTH_MAX_HZ: f64 = 150.0;
pub const TIME_MASK_COUNT: usize = 10;
pub const TIME_MASK_MAX_MS: f64 = 2000.0;

/// Shoebox room for the image-source method.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    pub dims_m: [f64; 3],
    pub source_m: [f64; 3],
    pub mic_m: [f64; 3],
    /// Energy absorbed per wall bounce, in (0, 1].
    pub absorption: f64,
    pub max_order: u32,
    pub speed_of_sound_mps: f64,
}

pub const SPEED_OF_SOUND_MPS: f64 = 343.0;

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims_m.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
            return Err(Error::arg("room dims_m must be positive"));
        }
        for (name, p) in [("source_m", &self.source_m), ("mic_m", &self.mic_m)] {
            for axis in 0..3 {
                if p[axis] <= 0.0 || p[axis] >= self.dims_m[axis] {
                    return Err(Error::arg(format!("{name} must lie strictly inside the room")));
                }
            }
        }
        if self.source_m == self.mic_m {
            return Err(Error::arg("source_m and mic_m must differ"));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(Error::arg("absorption must lie in (0, 1]"));
        }
        if self.speed_of_sound_mps <= 0.0 {
            return Err(Error::arg("speed_of_sound_mps must be positive"));
        }
        Ok(())
    }
}

/// One sampled transform with its drawn parameters. Placement randomness
/// (mask positions, noise realization) is drawn at apply time from the
/// per-item stream.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentKind {
    Pitch { cents: f64 },
    Add { snr_db: f64 },
    BandReject { center_hz: f64, width_hz: f64 },
    TimeMask,
    Reverb { room: RoomSpec },
}

impl AugmentKind {
    pub fn tag(&self) -> &'static str {
        match self {
            AugmentKind::Pitch { .. } => "pitch",
            AugmentKind::Add { .. } => "add",
            AugmentKind::BandReject { .. } => "band_rej",
            AugmentKind::TimeMask => "time_mask",
            AugmentKind::Reverb { .. } => "reverb",
        }
    }
}

/// Pitch shift by resampling: `2^(cents/1200)` speeds the signal up, so
/// duration shrinks as pitch rises.
pub fn pitch_shift(w: &Waveform, cents: f64) -> Result<Waveform> {
    if !(-PITCH_CENTS_MAX..=PITCH_CENTS_MAX).contains(&cents) {
        return Err(Error::arg(format!(
            "pitch cents {cents} outside [-{PITCH_CENTS_MAX}, {PITCH_CENTS_MAX}]"
        )));
    }
    resample(w, (cents / 1200.0).exp2())
}

/// Mix `noise` into `w` at exactly `snr_db`. The noise is tiled or cropped
/// to the signal length before the gain is computed, so the achieved SNR
/// matches the request up to float rounding. Output is clipped to [-1, 1].
pub fn add_noise(w: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if !(SNR_DB_MIN..=SNR_DB_MAX).contains(&snr_db) {
        return Err(Error::arg(format!(
            "snr_db {snr_db} outside [{SNR_DB_MIN}, {SNR_DB_MAX}]"
        )));
    }
    let signal_rms = w.rms();
    if signal_rms == 0.0 {
        return Err(Error::arg("add_noise: silent signal (rms = 0)"));
    }
    let tiled: Vec<f64> = (0..w.len())
        .map(|i| noise.samples()[i % noise.len()])
        .collect();
    let noise_rms = {
        let sum_sq: f64 = tiled.iter().map(|s| s * s).sum();
        (sum_sq / tiled.len() as f64).sqrt()
    };
    if noise_rms == 0.0 {
        return Err(Error::arg("add_noise: silent noise (rms = 0)"));
    }
    let gain = signal_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    let out: Vec<f64> = w
        .samples()
        .iter()
        .zip(&tiled)
        .map(|(s, n)| (s + gain * n).clamp(-1.0, 1.0))
        .collect();
    Waveform::new(out, w.sample_rate_hz())
}

/// Gain applied to the (tiled) noise for a requested SNR; exposed so tests
/// can assert the pre-clip mixing contract.
pub fn noise_gain(signal_rms: f64, noise_rms: f64, snr_db: f64) -> f64 {
    signal_rms / (noise_rms * 10f64.powf(snr_db / 20.0))
}

/// Zero every FFT bin whose frequency falls inside
/// `[center - width/2, center + width/2]` and invert. Linear, exactly
/// testable, length-preserving.
pub fn band_reject(w: &Waveform, center_hz: f64, width_hz: f64) -> Result<Waveform> {
    if !(width_hz > 0.0 && width_hz <= BAND_WIDTH_MAX_HZ) {
        return Err(Error::arg(format!(
            "band width {width_hz} outside (0, {BAND_WIDTH_MAX_HZ}]"
        )));
    }
    let nyquist = w.sample_rate_hz() as f64 / 2.0;
    let lo = center_hz - width_hz / 2.0;
    let hi = center_hz + width_hz / 2.0;
    if !(lo > 0.0 && hi < nyquist) {
        return Err(Error::arg(format!(
            "band [{lo}, {hi}] must lie strictly inside (0, {nyquist})"
        )));
    }
    let n = w.len();
    let mut buf: Vec<Complex<f64>> = w
        .samples()
        .iter()
        .map(|&s| Complex::new(s, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let rate = w.sample_rate_hz() as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        // signed bin frequency; conjugate bins share |freq|
        let f = if k <= n / 2 {
            k as f64 * rate / n as f64
        } else {
            (k as f64 - n as f64) * rate / n as f64
        };
        if f.abs() >= lo && f.abs() <= hi {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let out: Vec<f64> = buf.iter().map(|c| c.re * scale).collect();
    Waveform::new(out, w.sample_rate_hz())
}

/// A half-open masked region `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskInterval {
    pub start: usize,
    pub len: usize,
}

/// Draw exactly `TIME_MASK_COUNT` intervals: start uniform over samples,
/// length uniform over `[0, min(max_ms, remaining)]`. Intervals may overlap.
pub fn draw_time_masks(len: usize, sample_rate_hz: u32, rng: &mut impl Rng) -> Vec<MaskInterval> {
    let cap = (TIME_MASK_MAX_MS / 1000.0 * sample_rate_hz as f64).round() as usize;
    (0..TIME_MASK_COUNT)
        .map(|_| {
            let start = rng.gen_range(0..len);
            let max_len = cap.min(len - start);
            let l = rng.gen_range(0..=max_len);
            MaskInterval { start, len: l }
        })
        .collect()
}

/// Zero the union of the intervals, leaving everything else untouched.
pub fn apply_time_masks(w: &Waveform, masks: &[MaskInterval]) -> Waveform {
    let mut out = w.samples().to_vec();
    let n = out.len();
    for m in masks {
        for s in &mut out[m.start..(m.start + m.len).min(n)] {
            *s = 0.0;
        }
    }
    Waveform::new(out, w.sample_rate_hz()).expect("masking preserves validity")
}

pub fn time_mask(w: &Waveform, rng: &mut impl Rng) -> Waveform {
    let masks = draw_time_masks(w.len(), w.sample_rate_hz(), rng);
    apply_time_masks(w, &masks)
}

/// Image-source room impulse response. Images are enumerated up to a total
/// bounce count of `max_order`; each contributes `(1-absorption)^bounces /
/// distance` at the nearest-sample delay, and the result is normalized to
/// peak magnitude 1.
pub fn make_rir(room: &RoomSpec, sample_rate_hz: u32) -> Result<Waveform> {
    room.validate()?;
    let k = room.max_order as i64;
    let reflect = 1.0 - room.absorption;
    let mut contributions: Vec<(usize, f64)> = Vec::new();
    for nx in -k..=k {
        for ny in -(k - nx.abs())..=(k - nx.abs()) {
            let rem = k - nx.abs() - ny.abs();
            for nz in -rem..=rem {
                let image = [
                    image_coord(nx, room.dims_m[0], room.source_m[0]),
                    image_coord(ny, room.dims_m[1], room.source_m[1]),
                    image_coord(nz, room.dims_m[2], room.source_m[2]),
                ];
                let dist = distance(&image, &room.mic_m);
                let bounces = (nx.abs() + ny.abs() + nz.abs()) as i32;
                let gain = reflect.powi(bounces) / dist;
                if gain == 0.0 {
                    continue; // fully absorbed; don't pad the tail
                }
                let delay =
                    (dist / room.speed_of_sound_mps * sample_rate_hz as f64).round() as usize;
                contributions.push((delay, gain));
            }
        }
    }
    let len = contributions.iter().map(|&(d, _)| d).max().unwrap() + 1;
    let mut taps = vec![0.0; len];
    for (delay, gain) in contributions {
        taps[delay] += gain;
    }
    let peak = taps.iter().map(|t| t.abs()).fold(0.0, f64::max);
    if peak > 0.0 {
        for t in &mut taps {
            *t /= peak;
        }
    }
    Waveform::new(taps, sample_rate_hz)
}

/// Mirror coordinate of the source along one axis after `n` reflections.
fn image_coord(n: i64, dim: f64, source: f64) -> f64 {
    if n % 2 == 0 {
        n as f64 * dim + source
    } else {
        (n + 1) as f64 * dim - source
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Convolve with an impulse response, truncate to the input length, and
/// rescale so the output peak matches the input peak.
pub fn reverb(w: &Waveform, rir: &Waveform) -> Result<Waveform> {
    let n = w.len();
    let taps = rir.samples();
    let src = w.samples();
    const CHUNK: usize = 2048;
    let n_chunks = n.div_ceil(CHUNK);
    let blocks: Vec<Vec<f64>> = par::map_range(n_chunks, |b| {
        let lo = b * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi)
            .map(|i| {
                let j_max = i.min(taps.len() - 1);
                let mut acc = 0.0;
                for j in 0..=j_max {
                    acc += src[i - j] * taps[j];
                }
                acc
            })
            .collect()
    });
    let mut out: Vec<f64> = blocks.into_iter().flatten().collect();
    let out_peak = out.iter().map(|s| s.abs()).fold(0.0, f64::max);
    if out_peak > 0.0 {
        let scale = w.peak() / out_peak;
        for s in &mut out {
            *s *= scale;
        }
    }
    Waveform::new(out, w.sample_rate_hz())
}

/// Parameter ranges for sampled reverb rooms. Sized for small offices up
/// to seminar rooms; order 6 keeps the tail audible without blowing up
/// the image count.
const ROOM_DIM_XY_M: (f64, f64) = (3.0, 8.0);
const ROOM_DIM_Z_M: (f64, f64) = (2.4, 4.0);
const ROOM_ABSORPTION: (f64, f64) = (0.2, 0.7);
const ROOM_MARGIN_M: f64 = 0.5;
const ROOM_MAX_ORDER: u32 = 6;

pub fn sample_room(rng: &mut impl Rng) -> RoomSpec {
    let dims = [
        rng.gen_range(ROOM_DIM_XY_M.0..=ROOM_DIM_XY_M.1),
        rng.gen_range(ROOM_DIM_XY_M.0..=ROOM_DIM_XY_M.1),
        rng.gen_range(ROOM_DIM_Z_M.0..=ROOM_DIM_Z_M.1),
    ];
    let draw_point = |rng: &mut dyn rand::RngCore, dims: &[f64; 3]| {
        [
            rng.gen_range(ROOM_MARGIN_M..=dims[0] - ROOM_MARGIN_M),
            rng.gen_range(ROOM_MARGIN_M..=dims[1] - ROOM_MARGIN_M),
            rng.gen_range(ROOM_MARGIN_M..=dims[2] - ROOM_MARGIN_M),
        ]
    };
    let source = draw_point(rng, &dims);
    let mut mic = draw_point(rng, &dims);
    // keep source and mic apart; bounded deterministic retry
    while distance(&source, &mic) < 0.3 {
        mic = draw_point(rng, &dims);
    }
    RoomSpec {
        dims_m: dims,
        source_m: source,
        mic_m: mic,
        absorption: rng.gen_range(ROOM_ABSORPTION.0..=ROOM_ABSORPTION.1),
        max_order: ROOM_MAX_ORDER,
        speed_of_sound_mps: SPEED_OF_SOUND_MPS,
    }
}

/// Margin keeping sampled notches away from DC and Nyquist at the
/// canonical 16 kHz rate.
const BAND_CENTER_MARGIN_HZ: f64 = 50.0;

/// Draw one transform uniformly over the five kinds, with per-kind
/// parameters uniform over their declared ranges.
pub fn sample_transform(rng: &mut impl Rng) -> AugmentKind {
    match rng.gen_range(0..5u32) {
        0 => AugmentKind::Pitch {
            cents: rng.gen_range(-PITCH_CENTS_MAX..=PITCH_CENTS_MAX),
        },
        1 => AugmentKind::Add {
            snr_db: rng.gen_range(SNR_DB_MIN..=SNR_DB_MAX),
        },
        2 => {
            // (0, max]: flip the half-open side of gen_range
            let width_hz = BAND_WIDTH_MAX_HZ - rng.gen_range(0.0..BAND_WIDTH_MAX_HZ);
            let nyquist = crate::audio_io::CANONICAL_SAMPLE_RATE as f64 / 2.0;
            let lo = width_hz / 2.0 + BAND_CENTER_MARGIN_HZ;
            let hi = nyquist - width_hz / 2.0 - BAND_CENTER_MARGIN_HZ;
            AugmentKind::BandReject {
                center_hz: rng.gen_range(lo..=hi),
                width_hz,
            }
        }
        3 => AugmentKind::TimeMask,
        _ => AugmentKind::Reverb {
            room: sample_room(rng),
        },
    }
}

/// Synthetic noise sources standing in for a recorded noise corpus.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    White,
    Pink,
    /// Amplitude-modulated pink noise at a syllabic rate.
    Babble,
    File(Waveform),
}

#[derive(Debug, Clone)]
pub struct NoiseBank {
    sources: Vec<NoiseSource>,
}

impl NoiseBank {
    /// The shipped bank: white, pink, and babble-like AM noise.
    pub fn synthetic_default() -> Self {
        NoiseBank {
            sources: vec![NoiseSource::White, NoiseSource::Pink, NoiseSource::Babble],
        }
    }

    /// Load extra sources from a `path<TAB>tag` manifest; tags are
    /// informational. Entries are appended after the synthetic trio.
    pub fn from_manifest(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(std::path::Path::new("."));
        let mut bank = NoiseBank::synthetic_default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (wav, _tag) = line.split_once('\t').ok_or_else(|| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected `path<TAB>tag`".into(),
            })?;
            bank.sources
                .push(NoiseSource::File(crate::audio_io::read_wav(base.join(wav))?));
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Produce `len` samples of noise from a uniformly chosen source.
    pub fn sample_noise(&self, len: usize, sample_rate_hz: u32, rng: &mut impl Rng) -> Waveform {
        let idx = rng.gen_range(0..self.sources.len());
        match &self.sources[idx] {
            NoiseSource::White => white_noise(len, sample_rate_hz, rng),
            NoiseSource::Pink => pink_noise(len, sample_rate_hz, rng),
            NoiseSource::Babble => {
                let base = pink_noise(len, sample_rate_hz, rng);
                let f_am = rng.gen_range(2.0..=8.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let out = base
                    .samples()
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        let t = i as f64 / sample_rate_hz as f64;
                        s * (0.55 + 0.45 * (std::f64::consts::TAU * f_am * t + phase).sin())
                    })
                    .collect();
                Waveform::new(out, sample_rate_hz).expect("nonempty")
            }
            NoiseSource::File(w) => {
                // random circular offset into the recording
                let off = rng.gen_range(0..w.len());
                let out = (0..len).map(|i| w.samples()[(off + i) % w.len()]).collect();
                Waveform::new(out, sample_rate_hz).expect("nonempty")
            }
        }
    }
}

fn white_noise(len: usize, sample_rate_hz: u32, rng: &mut impl Rng) -> Waveform {
    use rand_distr::{Distribution, StandardNormal};
    let samples = (0..len)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            0.2 * x
        })
        .collect();
    Waveform::new(samples, sample_rate_hz).expect("nonempty")
}

/// Paul Kellet's economy pink filter over white noise.
fn pink_noise(len: usize, sample_rate_hz: u32, rng: &mut impl Rng) -> Waveform {
    use rand_distr::{Distribution, StandardNormal};
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    let samples = (0..len)
        .map(|_| {
            let white: f64 = StandardNormal.sample(rng);
            b0 = 0.99765 * b0 + white * 0.0990460;
            b1 = 0.96300 * b1 + white * 0.2965164;
            b2 = 0.57000 * b2 + white * 1.0526913;
            0.05 * (b0 + b1 + b2 + white * 0.1848)
        })
        .collect();
    Waveform::new(samples, sample_rate_hz).expect("nonempty")
}

/// Apply a sampled transform to one waveform. `rng` is the item's own
/// stream and supplies placement randomness; parameterized kinds
/// (pitch, band, reverb room, SNR) are already fixed inside `kind`.
pub fn apply_transform(
    kind: &AugmentKind,
    w: &Waveform,
    bank: &NoiseBank,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    match kind {
        AugmentKind::Pitch { cents } => pitch_shift(w, *cents),
        AugmentKind::Add { snr_db } => {
            let noise = bank.sample_noise(w.len(), w.sample_rate_hz(), rng);
            add_noise(w, &noise, *snr_db)
        }
        AugmentKind::BandReject {
            center_hz,
            width_hz,
        } => band_reject(w, *center_hz, *width_hz),
        AugmentKind::TimeMask => Ok(time_mask(w, rng)),
        AugmentKind::Reverb { room } => {
            let rir = make_rir(room, w.sample_rate_hz())?;
            reverb(w, &rir)
        }
    }
}
