//! Small trainable acoustic model over representation frames.
//!
//! Architecture per frame: affine d->h, tanh, depthwise temporal
//! convolution (kernel 5, same padding), affine h->h, tanh, affine
//! h->(V+1). Reverse-mode gradients are exact with respect to both the
//! parameters and the input frames; the latter power the attacks.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{stream, stream_rng};

pub const CONV_KERNEL: usize = 5;
const CONV_HALF: usize = CONV_KERNEL / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelLayout {
    pub input_dim: usize,
    pub hidden: usize,
    pub vocab: usize,
}

impl ModelLayout {
    pub fn classes(&self) -> usize {
        self.vocab + 1
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden, self.classes());
        h * d + h          // w1, b1
            + h * CONV_KERNEL + h // conv kernel, conv bias
            + h * h + h    // w2, b2
            + c * h + c    // w3, b3
    }
}

/// Offsets of each parameter block inside the flat vector.
struct Offsets {
    w1: usize,
    b1: usize,
    ck: usize,
    cb: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

fn offsets(l: &ModelLayout) -> Offsets {
    let (d, h, c) = (l.input_dim, l.hidden, l.classes());
    let w1 = 0;
    let b1 = w1 + h * d;
    let ck = b1 + h;
    let cb = ck + h * CONV_KERNEL;
    let w2 = cb + h;
    let b2 = w2 + h * h;
    let w3 = b2 + h;
    let b3 = w3 + c * h;
    Offsets {
        w1,
        b1,
        ck,
        cb,
        w2,
        b2,
        w3,
        b3,
    }
}

/// Trainable parameters plus Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub layout: ModelLayout,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

/// Typical magnitude of log-domain frontend features. The first layer's
/// init is shrunk by this so its tanh starts in the linear regime instead
/// of saturated.
pub const INPUT_FEATURE_SCALE: f64 = 10.0;

impl ModelState {
    /// Deterministic init: weights N(0, 1/sqrt(fan_in)), biases zero.
    /// The input layer is additionally divided by [`INPUT_FEATURE_SCALE`].
    pub fn init(layout: ModelLayout, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[stream::MODEL_INIT]);
        let off = offsets(&layout);
        let (d, h, c) = (layout.input_dim, layout.hidden, layout.classes());
        let mut params = vec![0.0; layout.param_count()];
        let mut fill =
            |lo: usize, n: usize, scale: f64, rng: &mut rand_chacha::ChaCha8Rng| {
                for p in &mut params[lo..lo + n] {
                    let x: f64 = StandardNormal.sample(rng);
                    *p = x * scale;
                }
            };
        fill(
            off.w1,
            h * d,
            1.0 / (d as f64).sqrt() / INPUT_FEATURE_SCALE,
            &mut rng,
        );
        fill(off.ck, h * CONV_KERNEL, 1.0 / (CONV_KERNEL as f64).sqrt(), &mut rng);
        fill(off.w2, h * h, 1.0 / (h as f64).sqrt(), &mut rng);
        fill(off.w3, c * h, 1.0 / (h as f64).sqrt(), &mut rng);
        let n = params.len();
        ModelState {
            layout,
            params,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layout.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.layout.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.layout.vocab as u32).to_le_bytes());
        out.extend_from_slice(&self.step_count.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for block in [&self.params, &self.adam_m, &self.adam_v] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 32 {
            return Err(fail("truncated header"));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(&format!(
                "version mismatch: file {version}, supported {CHECKPOINT_VERSION}"
            )));
        }
        let rd32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let layout = ModelLayout {
            input_dim: rd32(8),
            hidden: rd32(12),
            vocab: rd32(16),
        };
        let step_count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        if n != layout.param_count() {
            return Err(fail("parameter count does not match layout"));
        }
        if bytes.len() != 36 + 3 * n * 8 {
            return Err(fail("payload length mismatch"));
        }
        let read_block = |idx: usize| -> Vec<f64> {
            let base = 36 + idx * n * 8;
            (0..n)
                .map(|i| {
                    f64::from_le_bytes(bytes[base + i * 8..base + i * 8 + 8].try_into().unwrap())
                })
                .collect()
        };
        Ok(ModelState {
            layout,
            params: read_block(0),
            adam_m: read_block(1),
            adam_v: read_block(2),
            step_count,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"WPK1";
const CHECKPOINT_VERSION: u32 = 1;

/// Activation record for one forward pass. Owns a snapshot of the
/// parameters, so the backward pass always matches the forward that
/// produced it.
pub struct Tape {
    layout: ModelLayout,
    params: Vec<f64>,
    input: Mat,
    a1: Mat,
    conv_out: Mat,
    a2: Mat,
}

/// Run the model over `frames` (T x d), returning logits (T x V+1) and
/// the tape for `backward`.
pub fn forward(frames: &Mat, state: &ModelState) -> Result<(Mat, Tape)> {
    forward_with(frames, &state.layout, &state.params)
}

pub(crate) fn forward_with(
    frames: &Mat,
    layout: &ModelLayout,
    params: &[f64],
) -> Result<(Mat, Tape)> {
    let (d, h, c) = (layout.input_dim, layout.hidden, layout.classes());
    if frames.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "input width {} does not match model input_dim {}",
            frames.cols(),
            d
        )));
    }
    let off = offsets(layout);
    let t_frames = frames.rows();

    // affine d->h, tanh
    let mut a1 = Mat::zeros(t_frames, h);
    for t in 0..t_frames {
        let x = frames.row(t);
        let row = a1.row_mut(t);
        for (j, r) in row.iter_mut().enumerate() {
            let w = &params[off.w1 + j * d..off.w1 + (j + 1) * d];
            let mut acc = params[off.b1 + j];
            for (i, &xi) in x.iter().enumerate() {
                acc += w[i] * xi;
            }
            *r = acc.tanh();
        }
    }

    // depthwise temporal conv, kernel 5, zero padding
    let mut conv_out = Mat::zeros(t_frames, h);
    for t in 0..t_frames {
        let row = conv_out.row_mut(t);
        for (j, r) in row.iter_mut().enumerate() {
            let k = &params[off.ck + j * CONV_KERNEL..off.ck + (j + 1) * CONV_KERNEL];
            let mut acc = params[off.cb + j];
            for (tap, &kv) in k.iter().enumerate() {
                let src = t as i64 + tap as i64 - CONV_HALF as i64;
                if src >= 0 && (src as usize) < t_frames {
                    acc += a1[(src as usize, j)] * kv;
                }
            }
            *r = acc;
        }
    }

    // affine h->h, tanh
    let mut a2 = Mat::zeros(t_frames, h);
    for t in 0..t_frames {
        let u = conv_out.row(t);
        let row = a2.row_mut(t);
        for (j, r) in row.iter_mut().enumerate() {
            let w = &params[off.w2 + j * h..off.w2 + (j + 1) * h];
            let mut acc = params[off.b2 + j];
            for (i, &ui) in u.iter().enumerate() {
                acc += w[i] * ui;
            }
            *r = acc.tanh();
        }
    }

    // affine h->(V+1)
    let mut logits = Mat::zeros(t_frames, c);
    for t in 0..t_frames {
        let a = a2.row(t);
        let row = logits.row_mut(t);
        for (k, r) in row.iter_mut().enumerate() {
            let w = &params[off.w3 + k * h..off.w3 + (k + 1) * h];
            let mut acc = params[off.b3 + k];
            for (i, &ai) in a.iter().enumerate() {
                acc += w[i] * ai;
            }
            *r = acc;
        }
    }

    let tape = Tape {
        layout: *layout,
        params: params.to_vec(),
        input: frames.clone(),
        a1,
        conv_out,
        a2,
    };
    Ok((logits, tape))
}

/// Exact reverse-mode gradients of the forward map: returns
/// `(grad_params, grad_input)`.
pub fn backward(tape: &Tape, grad_logits: &Mat) -> Result<(Vec<f64>, Mat)> {
    let l = &tape.layout;
    let (d, h, c) = (l.input_dim, l.hidden, l.classes());
    let t_frames = tape.input.rows();
    if grad_logits.rows() != t_frames || grad_logits.cols() != c {
        return Err(Error::ShapeMismatch(format!(
            "grad_logits {}x{} vs expected {}x{}",
            grad_logits.rows(),
            grad_logits.cols(),
            t_frames,
            c
        )));
    }
    let off = offsets(l);
    let p = &tape.params;
    let mut grad = vec![0.0; l.param_count()];

    // logits = a2 w3^T + b3
    let mut d_a2 = Mat::zeros(t_frames, h);
    for t in 0..t_frames {
        let g = grad_logits.row(t);
        let a = tape.a2.row(t);
        for (k, &gk) in g.iter().enumerate() {
            grad[off.b3 + k] += gk;
            let wrow = off.w3 + k * h;
            let w = &p[wrow..wrow + h];
            let da = d_a2.row_mut(t);
            for i in 0..h {
                grad[wrow + i] += gk * a[i];
                da[i] += gk * w[i];
            }
        }
    }

    // a2 = tanh(u w2^T + b2)
    let mut d_conv = Mat::zeros(t_frames, h);
    for t in 0..t_frames {
        let u = tape.conv_out.row(t);
        let a = tape.a2.row(t);
        let da = d_a2.row(t);
        for j in 0..h {
            let dp = da[j] * (1.0 - a[j] * a[j]);
            grad[off.b2 + j] += dp;
            let wrow = off.w2 + j * h;
            let w = &p[wrow..wrow + h];
            let dc = d_conv.row_mut(t);
            for i in 0..h {
                grad[wrow + i] += dp * u[i];
                dc[i] += dp * w[i];
            }
        }
    }

    // conv_out[t][j] = sum_tap a1[t+tap-2][j] k[j][tap] + cb[j]
    let mut d_a1 = Mat::zeros(t_frames, h);
    for t in 0..t_frames {
        let dc = d_conv.row(t);
        for j in 0..h {
            grad[off.cb + j] += dc[j];
            let krow = off.ck + j * CONV_KERNEL;
            for tap in 0..CONV_KERNEL {
                let src = t as i64 + tap as i64 - CONV_HALF as i64;
                if src >= 0 && (src as usize) < t_frames {
                    grad[krow + tap] += dc[j] * tape.a1[(src as usize, j)];
                    d_a1[(src as usize, j)] += dc[j] * p[krow + tap];
                }
            }
        }
    }

    // a1 = tanh(x w1^T + b1)
    let mut d_input = Mat::zeros(t_frames, d);
    for t in 0..t_frames {
        let x = tape.input.row(t);
        let a = tape.a1.row(t);
        let da = d_a1.row(t);
        for j in 0..h {
            let dp = da[j] * (1.0 - a[j] * a[j]);
            grad[off.b1 + j] += dp;
            let wrow = off.w1 + j * d;
            let w = &p[wrow..wrow + d];
            let dx = d_input.row_mut(t);
            for i in 0..d {
                grad[wrow + i] += dp * x[i];
                dx[i] += dp * w[i];
            }
        }
    }

    Ok((grad, d_input))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// touching the state.
pub fn adam_step(state: &mut ModelState, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != state.params.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient length {} vs parameter length {}",
            grad.len(),
            state.params.len()
        )));
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..state.params.len() {
        let g = grad[i];
        state.adam_m[i] = ADAM_BETA1 * state.adam_m[i] + (1.0 - ADAM_BETA1) * g;
        state.adam_v[i] = ADAM_BETA2 * state.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.adam_m[i] / bc1;
        let v_hat = state.adam_v[i] / bc2;
        state.params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Tri-stage learning-rate curve: linear warmup from `0.01 * lr_max`,
/// constant hold, exponential decay to `0.05 * lr_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub lr_max: f64,
    pub phases: [f64; 3],
    pub total_steps: usize,
}

pub const WARMUP_FLOOR: f64 = 0.01;
pub const DECAY_FLOOR: f64 = 0.05;

impl ScheduleSpec {
    pub fn new(lr_max: f64, phases: [f64; 3], total_steps: usize) -> Result<Self> {
        let s = ScheduleSpec {
            lr_max,
            phases,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_max <= 0.0 || !self.lr_max.is_finite() {
            return Err(Error::arg("schedule.lr_max must be positive"));
        }
        if self.phases.iter().any(|&f| f < 0.0) {
            return Err(Error::arg("schedule.phases must be nonnegative"));
        }
        let sum: f64 = self.phases.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!(
                "schedule.phases must sum to 1 (got {sum})"
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::arg("schedule.total_steps must be positive"));
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &ScheduleSpec, step: usize) -> Result<f64> {
    if step >= schedule.total_steps {
        return Err(Error::arg(format!(
            "step {step} outside schedule of {} steps",
            schedule.total_steps
        )));
    }
    let total = schedule.total_steps as f64;
    let t = step as f64;
    let warm_end = schedule.phases[0] * total;
    let hold_end = (schedule.phases[0] + schedule.phases[1]) * total;
    let lr = if t < warm_end {
        schedule.lr_max * (WARMUP_FLOOR + (1.0 - WARMUP_FLOOR) * t / warm_end)
    } else if t < hold_end {
        schedule.lr_max
    } else {
        let span = total - hold_end;
        let frac = if span > 0.0 { (t - hold_end) / span } else { 1.0 };
        schedule.lr_max * (DECAY_FLOOR.ln() * frac).exp()
    };
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc;
    use rand::Rng;

    fn small_layout() -> ModelLayout {
        ModelLayout {
            input_dim: 5,
            hidden: 6,
            vocab: 3,
        }
    }

    fn random_frames(rng: &mut impl Rng, t: usize, d: usize) -> Mat {
        Mat::from_vec(t, d, (0..t * d).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let layout = small_layout();
        let state = ModelState {
            layout,
            params: vec![0.0; layout.param_count()],
            adam_m: vec![0.0; layout.param_count()],
            adam_v: vec![0.0; layout.param_count()],
            step_count: 0,
        };
        let frames = Mat::from_vec(3, 5, vec![0.7; 15]);
        let (logits, _) = forward(&frames, &state).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let post = ctc::frame_posteriors(&logits);
        for &v in post.data() {
            assert!((v - 0.25).abs() <= 1e-15);
        }
    }

    #[test]
    fn row_count_follows_input() {
        let layout = small_layout();
        let state = ModelState::init(layout, 1);
        let mut rng = crate::rng::stream_rng(1, &[10]);
        let (a, _) = forward(&random_frames(&mut rng, 4, 5), &state).unwrap();
        let (b, _) = forward(&random_frames(&mut rng, 8, 5), &state).unwrap();
        assert_eq!(a.rows(), 4);
        assert_eq!(b.rows(), 8);
        assert_eq!(a.cols(), 4);
        assert!(forward(&random_frames(&mut rng, 4, 3), &state).is_err());
    }

    #[test]
    fn zero_logit_grad_gives_zero_grads() {
        let layout = small_layout();
        let state = ModelState::init(layout, 2);
        let mut rng = crate::rng::stream_rng(1, &[11]);
        let frames = random_frames(&mut rng, 5, 5);
        let (logits, tape) = forward(&frames, &state).unwrap();
        let (gp, gi) = backward(&tape, &Mat::zeros(logits.rows(), logits.cols())).unwrap();
        assert!(gp.iter().all(|&g| g == 0.0));
        assert!(gi.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let layout = small_layout();
        let mut rng = crate::rng::stream_rng(1, &[12]);
        let h = 1e-5;
        for case in 0..10 {
            let state = ModelState::init(layout, 100 + case);
            let frames = random_frames(&mut rng, 6, 5);
            let ids = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
            let (logits, tape) = forward(&frames, &state).unwrap();
            let (_, grad_logits) = ctc::ctc_forward(&logits, &ids).unwrap();
            let (gp, gi) = backward(&tape, &grad_logits).unwrap();

            let loss_at = |params: &[f64], frames: &Mat| -> f64 {
                let (lg, _) = forward_with(frames, &layout, params).unwrap();
                ctc::ctc_loss(&lg, &ids).unwrap()
            };

            for _ in 0..6 {
                let i = rng.gen_range(0..gp.len());
                let mut plus = state.params.clone();
                plus[i] += h;
                let mut minus = state.params.clone();
                minus[i] -= h;
                let fd = (loss_at(&plus, &frames) - loss_at(&minus, &frames)) / (2.0 * h);
                let denom = gp[i].abs().max(fd.abs()).max(1e-6);
                assert!((gp[i] - fd).abs() / denom <= 1e-4, "param {i}: {} vs {fd}", gp[i]);
            }
            for _ in 0..4 {
                let t = rng.gen_range(0..frames.rows());
                let c = rng.gen_range(0..frames.cols());
                let mut plus = frames.clone();
                plus[(t, c)] += h;
                let mut minus = frames.clone();
                minus[(t, c)] -= h;
                let fd =
                    (loss_at(&state.params, &plus) - loss_at(&state.params, &minus)) / (2.0 * h);
                let denom = gi[(t, c)].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (gi[(t, c)] - fd).abs() / denom <= 1e-4,
                    "input ({t},{c}): {} vs {fd}",
                    gi[(t, c)]
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let layout = small_layout();
        let mut state = ModelState::init(layout, 3);
        let n = state.params.len();
        // one nonzero step to populate the moments
        adam_step(&mut state, &vec![0.5; n], 1e-3).unwrap();
        let params_before = state.params.clone();
        let v_before = state.adam_v.clone();
        adam_step(&mut state, &vec![0.0; n], 1e-3).unwrap();
        // m decays toward zero, so a zero-gradient step still nudges params
        // along the old momentum; v must decay by beta2 exactly
        for i in 0..n {
            assert!((state.adam_v[i] - ADAM_BETA2 * v_before[i]).abs() <= 1e-18);
        }
        // with zero momentum as well, params stay put
        let mut fresh = ModelState::init(layout, 3);
        let frozen = fresh.params.clone();
        adam_step(&mut fresh, &vec![0.0; n], 1e-3).unwrap();
        assert_eq!(fresh.params, frozen);
        assert_ne!(state.params, params_before);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let layout = small_layout();
        let mut state = ModelState::init(layout, 4);
        let n = state.params.len();
        let grad = vec![0.37; n];
        let lr = 1e-3;
        let mut prev = state.params[0];
        let mut delta = 0.0;
        for _ in 0..2000 {
            adam_step(&mut state, &grad, lr).unwrap();
            delta = (state.params[0] - prev).abs();
            prev = state.params[0];
        }
        assert!((delta - lr).abs() <= 0.01 * lr, "step magnitude {delta}");
    }

    #[test]
    fn adam_rejects_nonfinite_gradient() {
        let layout = small_layout();
        let mut state = ModelState::init(layout, 5);
        let before = state.clone();
        let mut grad = vec![0.0; state.params.len()];
        grad[3] = f64::NAN;
        assert!(matches!(
            adam_step(&mut state, &grad, 1e-3),
            Err(Error::NonFiniteGradient)
        ));
        assert_eq!(state, before);
    }

    #[test]
    fn training_updates_are_deterministic() {
        let layout = small_layout();
        let run = || {
            let mut state = ModelState::init(layout, 6);
            let mut rng = crate::rng::stream_rng(2, &[13]);
            for _ in 0..20 {
                let g: Vec<f64> = (0..state.params.len())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                adam_step(&mut state, &g, 2e-3).unwrap();
            }
            state
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        assert_eq!(a.adam_m, b.adam_m);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let layout = small_layout();
        let mut state = ModelState::init(layout, 7);
        let g = vec![0.25; state.params.len()];
        adam_step(&mut state, &g, 1e-3).unwrap();
        let dir = std::env::temp_dir().join("wapat-model-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("ck.bin");
        state.save(&p).unwrap();
        let back = ModelState::load(&p).unwrap();
        assert_eq!(state, back);

        // version mismatch rejected
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99;
        let bad = dir.join("ck_bad.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(ModelState::load(&bad), Err(Error::Checkpoint(_))));

        // truncation rejected
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&bad, &bytes).unwrap();
        assert!(ModelState::load(&bad).is_err());
    }

    #[test]
    fn schedule_boundaries() {
        let s = ScheduleSpec::new(3e-3, [0.1, 0.4, 0.5], 2000).unwrap();
        assert!((lr_at(&s, 0).unwrap() - 0.01 * s.lr_max).abs() <= 1e-15);
        // end of warmup
        assert!((lr_at(&s, 200).unwrap() - s.lr_max).abs() <= 1e-9);
        // inside hold
        assert_eq!(lr_at(&s, 600).unwrap(), s.lr_max);
        // final step hits the decay floor within 1%
        let last = lr_at(&s, 1999).unwrap();
        assert!((last - 0.05 * s.lr_max).abs() <= 0.01 * 0.05 * s.lr_max);
        assert!(lr_at(&s, 2000).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(ScheduleSpec::new(0.0, [0.1, 0.4, 0.5], 100).is_err());
        assert!(ScheduleSpec::new(1e-3, [0.2, 0.4, 0.5], 100).is_err());
        assert!(ScheduleSpec::new(1e-3, [0.1, 0.4, 0.5], 0).is_err());
    }

    #[test]
    fn single_small_step_decreases_loss() {
        // descent sanity: >= 95 of 100 random initializations
        let layout = small_layout();
        let mut rng = crate::rng::stream_rng(2, &[14]);
        let frames = random_frames(&mut rng, 8, 5);
        let ids = vec![1, 0];
        let mut ok = 0;
        for seed in 0..100u64 {
            let mut state = ModelState::init(layout, 1000 + seed);
            let (logits, tape) = forward(&frames, &state).unwrap();
            let (before, grad_logits) = ctc::ctc_forward(&logits, &ids).unwrap();
            let (gp, _) = backward(&tape, &grad_logits).unwrap();
            adam_step(&mut state, &gp, 1e-4).unwrap();
            let (logits2, _) = forward(&frames, &state).unwrap();
            let after = ctc::ctc_loss(&logits2, &ids).unwrap();
            if after < before {
                ok += 1;
            }
        }
        assert!(ok >= 95, "descent held for only {ok}/100 runs");
    }
}
