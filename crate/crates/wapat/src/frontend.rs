//! Frozen frontend mapping waveforms to frame-level representations.
//!
//! The map is Hann-windowed power spectra, log-mel energies (floored at
//! 1e-10 before the log), then a fixed random projection whose entries are
//! drawn once from `projection_seed` and scaled by `1/sqrt(n_mels)`. Two
//! frontends built from equal specs produce bit-identical outputs; the
//! projection is never trained.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSpec {
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    /// Output representation width.
    pub d: usize,
    pub projection_seed: u64,
}

impl Default for FrontendSpec {
    fn default() -> Self {
        FrontendSpec {
            n_mels: 80,
            window_ms: 25.0,
            hop_ms: 10.0,
            d: 32,
            projection_seed: 17,
        }
    }
}

impl FrontendSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::arg("frontend.n_mels must be positive"));
        }
        if self.d == 0 {
            return Err(Error::arg("frontend.d must be positive"));
        }
        if self.window_ms <= 0.0 || self.hop_ms <= 0.0 {
            return Err(Error::arg("frontend.window_ms and hop_ms must be positive"));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (self.window_ms / 1000.0 * sample_rate_hz as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms / 1000.0 * sample_rate_hz as f64).round() as usize
    }

    /// `1 + floor((len - window) / hop)`, or an error below one window.
    pub fn frame_count(&self, len: usize, sample_rate_hz: u32) -> Result<usize> {
        let window = self.window_samples(sample_rate_hz);
        if len < window {
            return Err(Error::arg(format!(
                "input of {len} samples shorter than one {window}-sample window"
            )));
        }
        Ok(1 + (len - window) / self.hop_samples(sample_rate_hz))
    }
}

/// Frame-level representation: one `d`-wide row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeRepr {
    pub frames: Mat,
    pub frame_hop_ms: f64,
}

impl PhonemeRepr {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn d(&self) -> usize {
        self.frames.cols()
    }
}

pub const LOG_FLOOR: f64 = 1e-10;

/// One mel filter: triangle weights over a contiguous span of FFT bins.
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// A frontend instantiated for one sample rate: window, filterbank,
/// projection, and FFT plans are computed once and shared.
pub struct Frontend {
    spec: FrontendSpec,
    sample_rate_hz: u32,
    window: usize,
    hop: usize,
    n_fft: usize,
    hann: Vec<f64>,
    filters: Vec<MelFilter>,
    /// d x n_mels, frozen.
    projection: Mat,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl Frontend {
    pub fn new(spec: &FrontendSpec, sample_rate_hz: u32) -> Result<Self> {
        spec.validate()?;
        let window = spec.window_samples(sample_rate_hz);
        let hop = spec.hop_samples(sample_rate_hz);
        if window == 0 || hop == 0 {
            return Err(Error::arg("frontend window/hop round to zero samples"));
        }
        let n_fft = window.next_power_of_two();
        let hann: Vec<f64> = (0..window)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / window as f64).cos())
            .collect();
        let filters = mel_filterbank(spec.n_mels, n_fft, sample_rate_hz);
        let mut rng = stream_rng(spec.projection_seed, &[stream::PROJECTION]);
        let scale = 1.0 / (spec.n_mels as f64).sqrt();
        let data: Vec<f64> = (0..spec.d * spec.n_mels)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x * scale
            })
            .collect();
        let projection = Mat::from_vec(spec.d, spec.n_mels, data);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Frontend {
            spec: spec.clone(),
            sample_rate_hz,
            window,
            hop,
            n_fft,
            hann,
            filters,
            projection,
            fft,
        })
    }

    pub fn spec(&self) -> &FrontendSpec {
        &self.spec
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::arg(format!(
                "waveform rate {} does not match frontend rate {}",
                w.sample_rate_hz(),
                self.sample_rate_hz
            )));
        }
        Ok(())
    }

    /// Power spectrum of frame `t` (bins 0..=n_fft/2).
    fn frame_power(&self, samples: &[f64], t: usize, buf: &mut [Complex<f64>]) -> Vec<f64> {
        let off = t * self.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            if i < self.window {
                *b = Complex::new(samples[off + i] * self.hann[i], 0.0);
            } else {
                *b = Complex::new(0.0, 0.0);
            }
        }
        self.fft.process(buf);
        buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Log-mel energies per frame (T x n_mels), before projection.
    pub fn log_mel_energies(&self, x: &Waveform) -> Result<Mat> {
        self.check_rate(x)?;
        let t_frames = self.spec.frame_count(x.len(), self.sample_rate_hz)?;
        let mut out = Mat::zeros(t_frames, self.spec.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..t_frames {
            let power = self.frame_power(x.samples(), t, &mut buf);
            let row = out.row_mut(t);
            for (m, filter) in self.filters.iter().enumerate() {
                let mut e = 0.0;
                for (j, &w) in filter.weights.iter().enumerate() {
                    e += w * power[filter.first_bin + j];
                }
                row[m] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(out)
    }

    /// The frozen map `z = T(x)`: log-mel energies through the fixed
    /// projection. Deterministic given `(x, spec)`.
    pub fn tokenize(&self, x: &Waveform) -> Result<PhonemeRepr> {
        let logmel = self.log_mel_energies(x)?;
        let t_frames = logmel.rows();
        let mut frames = Mat::zeros(t_frames, self.spec.d);
        for t in 0..t_frames {
            let lm = logmel.row(t);
            let row = frames.row_mut(t);
            for (j, r) in row.iter_mut().enumerate() {
                let w = self.projection.row(j);
                let mut acc = 0.0;
                for (m, &l) in lm.iter().enumerate() {
                    acc += w[m] * l;
                }
                *r = acc;
            }
        }
        Ok(PhonemeRepr {
            frames,
            frame_hop_ms: self.spec.hop_ms,
        })
    }

    /// Adjoint of `tokenize`: pull a gradient on the output frames back to
    /// a gradient on the input samples. Used by the waveform-space attack
    /// baseline; the projection itself stays frozen.
    pub fn input_grad(&self, x: &Waveform, grad_frames: &Mat) -> Result<Vec<f64>> {
        self.check_rate(x)?;
        let t_frames = self.spec.frame_count(x.len(), self.sample_rate_hz)?;
        if grad_frames.rows() != t_frames || grad_frames.cols() != self.spec.d {
            return Err(Error::ShapeMismatch(format!(
                "grad_frames {}x{} vs expected {}x{}",
                grad_frames.rows(),
                grad_frames.cols(),
                t_frames,
                self.spec.d
            )));
        }
        let half = self.n_fft / 2;
        let mut grad = vec![0.0; x.len()];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut adj = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..t_frames {
            // recompute the frame's spectrum
            let off = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                if i < self.window {
                    *b = Complex::new(x.samples()[off + i] * self.hann[i], 0.0);
                } else {
                    *b = Complex::new(0.0, 0.0);
                }
            }
            self.fft.process(&mut buf);

            // d(loss)/d(logmel_m) through the projection
            let gf = grad_frames.row(t);
            let mut g_logmel = vec![0.0; self.spec.n_mels];
            for (j, &g) in gf.iter().enumerate() {
                let w = self.projection.row(j);
                for (m, gl) in g_logmel.iter_mut().enumerate() {
                    *gl += g * w[m];
                }
            }

            // through the floored log into per-bin power gradients
            let mut g_power = vec![0.0; half + 1];
            for (m, filter) in self.filters.iter().enumerate() {
                let mut e = 0.0;
                for (j, &w) in filter.weights.iter().enumerate() {
                    e += w * buf[filter.first_bin + j].norm_sqr();
                }
                if e <= LOG_FLOOR {
                    continue; // clamped by the floor: zero gradient
                }
                let ge = g_logmel[m] / e;
                for (j, &w) in filter.weights.iter().enumerate() {
                    g_power[filter.first_bin + j] += ge * w;
                }
            }

            // adjoint of |FFT|^2: dL/dy = 2 Re(FFT[g_k * conj(X_k)])
            for a in adj.iter_mut() {
                *a = Complex::new(0.0, 0.0);
            }
            for (k, &g) in g_power.iter().enumerate() {
                adj[k] = buf[k].conj() * g;
            }
            self.fft.process(&mut adj);
            for i in 0..self.window {
                grad[off + i] += 2.0 * adj[i].re * self.hann[i];
            }
        }
        Ok(grad)
    }
}

/// Convenience one-shot tokenize; batch code should build a `Frontend`
/// once and reuse it.
pub fn tokenize(x: &Waveform, spec: &FrontendSpec) -> Result<PhonemeRepr> {
    Frontend::new(spec, x.sample_rate_hz())?.tokenize(x)
}

/// HTK-style triangular filters with unit peaks, equally spaced on the
/// mel scale from 0 to Nyquist. Stored sparse: each filter only touches
/// a contiguous bin span.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Vec<MelFilter> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(hz_to_mel(nyquist) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate_hz as f64 / n_fft as f64;
    let half = n_fft / 2;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..=half {
                let f = bin_hz(k);
                let w = if f > lo && f < mid {
                    (f - lo) / (mid - lo)
                } else if f >= mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    if first_bin.is_none() {
                        first_bin = Some(k);
                    }
                    weights.push(w);
                } else if first_bin.is_some() {
                    break;
                }
            }
            // very narrow filters can miss every bin; pin them to the
            // nearest bin so the filterbank always has full rank
            if first_bin.is_none() {
                let k = ((mid / (sample_rate_hz as f64) * n_fft as f64).round() as usize).min(half);
                first_bin = Some(k);
                weights.push(1.0);
            }
            MelFilter {
                first_bin: first_bin.unwrap(),
                weights,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::CANONICAL_SAMPLE_RATE;
    use rand::Rng;
    use std::f64::consts::PI;

    fn tone(freq_hz: f64, amp: f64, n: usize) -> Waveform {
        let rate = CANONICAL_SAMPLE_RATE;
        let samples = (0..n)
            .map(|i| amp * (2.0 * PI * freq_hz * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        let spec = FrontendSpec::default();
        // 1 second at 16 kHz, window 400, hop 160
        assert_eq!(spec.frame_count(16_000, 16_000).unwrap(), 98);
        assert_eq!(spec.frame_count(400, 16_000).unwrap(), 1);
        assert!(spec.frame_count(399, 16_000).is_err());
        let mut rng = crate::rng::stream_rng(1, &[1]);
        for _ in 0..50 {
            let len = rng.gen_range(400..50_000usize);
            let t = spec.frame_count(len, 16_000).unwrap();
            assert_eq!(t, 1 + (len - 400) / 160);
        }
    }

    #[test]
    fn silence_frames_identical_and_floored() {
        let fe = Frontend::new(&FrontendSpec::default(), 16_000).unwrap();
        let silent = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let repr = fe.tokenize(&silent).unwrap();
        let first = repr.frames.row(0).to_vec();
        for t in 1..repr.n_frames() {
            assert_eq!(repr.frames.row(t), &first[..]);
        }
        // frame value = projection applied to the all-floor log-mel vector
        let lm = LOG_FLOOR.ln();
        for (j, &v) in first.iter().enumerate() {
            let expect: f64 = fe.projection.row(j).iter().map(|w| w * lm).sum();
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn tokenize_is_frozen_deterministic() {
        let spec = FrontendSpec::default();
        let w = tone(440.0, 0.4, 8000);
        let a = tokenize(&w, &spec).unwrap();
        let b = tokenize(&w, &spec).unwrap();
        assert_eq!(a, b);
        // a different projection seed changes the output
        let other = FrontendSpec {
            projection_seed: 18,
            ..spec
        };
        assert_ne!(tokenize(&w, &other).unwrap(), a);
    }

    #[test]
    fn input_scaling_shifts_logmel_by_two_log_c() {
        let fe = Frontend::new(&FrontendSpec::default(), 16_000).unwrap();
        let mut rng = crate::rng::stream_rng(2, &[1]);
        let samples: Vec<f64> = (0..2000).map(|_| rng.gen_range(-0.25..0.25)).collect();
        let w = Waveform::new(samples.clone(), 16_000).unwrap();
        let c = 2.0;
        let scaled =
            Waveform::new(samples.iter().map(|s| s * c).collect(), 16_000).unwrap();
        let a = fe.log_mel_energies(&w).unwrap();
        let b = fe.log_mel_energies(&scaled).unwrap();
        let shift = 2.0 * c.ln();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - shift).abs() <= 1e-6, "shift {} vs {}", y - x, shift);
        }
    }

    #[test]
    fn small_perturbation_small_frame_change() {
        let fe = Frontend::new(&FrontendSpec::default(), 16_000).unwrap();
        let mut rng = crate::rng::stream_rng(2, &[2]);
        let samples: Vec<f64> = (0..1200).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let w = Waveform::new(samples.clone(), 16_000).unwrap();
        let base = fe.tokenize(&w).unwrap();
        for idx in [0usize, 333, 600, 1199] {
            let mut bumped = samples.clone();
            bumped[idx] += 1e-6;
            let wb = Waveform::new(bumped, 16_000).unwrap();
            let pert = fe.tokenize(&wb).unwrap();
            assert!(base.frames.linf_distance(&pert.frames) <= 1e-2);
        }
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let spec = FrontendSpec {
            n_mels: 20,
            d: 6,
            ..FrontendSpec::default()
        };
        let fe = Frontend::new(&spec, 16_000).unwrap();
        // tone keeps every mel energy well above the log floor's kink
        let base = tone(700.0, 0.4, 800);
        let noisy: Vec<f64> = {
            let mut rng = crate::rng::stream_rng(2, &[3]);
            base.samples()
                .iter()
                .map(|s| s + rng.gen_range(-0.05..0.05))
                .collect()
        };
        let w = Waveform::new(noisy.clone(), 16_000).unwrap();
        let t_frames = spec.frame_count(w.len(), 16_000).unwrap();

        // random linear functional of the frames as the test loss
        let mut rng = crate::rng::stream_rng(2, &[4]);
        let gw: Vec<f64> = (0..t_frames * spec.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad_frames = Mat::from_vec(t_frames, spec.d, gw.clone());
        let loss = |samples: &[f64]| -> f64 {
            let wv = Waveform::new(samples.to_vec(), 16_000).unwrap();
            let repr = fe.tokenize(&wv).unwrap();
            repr.frames
                .data()
                .iter()
                .zip(&gw)
                .map(|(a, b)| a * b)
                .sum()
        };

        let analytic = fe.input_grad(&w, &grad_frames).unwrap();
        let h = 1e-6;
        for idx in [3usize, 160, 401, 700, 799] {
            let mut plus = noisy.clone();
            plus[idx] += h;
            let mut minus = noisy.clone();
            minus[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic[idx] - fd).abs() / denom <= 1e-4,
                "sample {idx}: analytic {} vs fd {fd}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn too_short_input_rejected() {
        let fe = Frontend::new(&FrontendSpec::default(), 16_000).unwrap();
        let w = Waveform::new(vec![0.1; 200], 16_000).unwrap();
        assert!(fe.tokenize(&w).is_err());
    }
}
