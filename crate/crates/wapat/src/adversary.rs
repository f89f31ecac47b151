//! The attack stack: l-infinity ball machinery, projected gradient
//! descent on representations and raw waveforms, and the guided
//! single-step attack whose ascent direction mixes the CTC gradient with
//! a KL term pulling the clean-side candidate toward the augmented-side
//! candidate.

use rand::Rng;

use crate::audio_io::Waveform;
use crate::augment::{apply_transform, AugmentKind, NoiseBank};
use crate::ctc;
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::mat::Mat;
use crate::model::{self, ModelState};

/// Attack hyperparameters. The ball is always centered on the clean
/// representation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l-infinity radius.
    pub epsilon: f64,
    /// Step size for iterated PGD.
    pub alpha: f64,
    pub steps: usize,
    pub guidance: bool,
    /// Weight of the guidance term in the ascent objective.
    pub lambda: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.01,
            alpha: 0.01,
            steps: 1,
            guidance: false,
            lambda: 1.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::arg("attack.epsilon must be finite and >= 0"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::arg("attack.alpha must be finite and >= 0"));
        }
        if self.steps == 0 {
            return Err(Error::arg("attack.steps must be >= 1"));
        }
        if self.steps == 1 && self.alpha > self.epsilon {
            return Err(Error::arg(
                "attack.alpha must not exceed attack.epsilon for single-step attacks",
            ));
        }
        if !self.lambda.is_finite() {
            return Err(Error::arg("attack.lambda must be finite"));
        }
        Ok(())
    }
}

/// Anything the attacks can differentiate through: produce logits from
/// frames and pull a logit gradient back to the frames.
pub trait Acoustic: Sync {
    fn logits(&self, frames: &Mat) -> Result<Mat>;

    fn input_grad_from_logit_grad(&self, frames: &Mat, grad_logits: &Mat) -> Result<Mat>;

    /// CTC loss at `frames` and its gradient with respect to the frames.
    fn ctc_input_grad(&self, frames: &Mat, ids: &[usize]) -> Result<(f64, Mat)> {
        let logits = self.logits(frames)?;
        let (loss, grad_logits) = ctc::ctc_forward(&logits, ids)?;
        Ok((loss, self.input_grad_from_logit_grad(frames, &grad_logits)?))
    }

    fn ctc_loss(&self, frames: &Mat, ids: &[usize]) -> Result<f64> {
        ctc::ctc_loss(&self.logits(frames)?, ids)
    }
}

impl Acoustic for ModelState {
    fn logits(&self, frames: &Mat) -> Result<Mat> {
        Ok(model::forward(frames, self)?.0)
    }

    fn input_grad_from_logit_grad(&self, frames: &Mat, grad_logits: &Mat) -> Result<Mat> {
        let (_, tape) = model::forward(frames, self)?;
        Ok(model::backward(&tape, grad_logits)?.1)
    }

    fn ctc_input_grad(&self, frames: &Mat, ids: &[usize]) -> Result<(f64, Mat)> {
        let (logits, tape) = model::forward(frames, self)?;
        let (loss, grad_logits) = ctc::ctc_forward(&logits, ids)?;
        Ok((loss, model::backward(&tape, &grad_logits)?.1))
    }
}

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Independent uniform draw from the epsilon-ball around `z`.
pub fn uniform_init(z: &Mat, epsilon: f64, rng: &mut impl Rng) -> Mat {
    if epsilon == 0.0 {
        return z.clone();
    }
    z.map(|v| v + rng.gen_range(-epsilon..=epsilon))
}

/// Entrywise clamp onto the epsilon-ball around `center`.
pub fn project_ball(candidate: &Mat, center: &Mat, epsilon: f64) -> Result<Mat> {
    if !candidate.same_shape(center) {
        return Err(Error::ShapeMismatch(format!(
            "project_ball: candidate {}x{} vs center {}x{}",
            candidate.rows(),
            candidate.cols(),
            center.rows(),
            center.cols()
        )));
    }
    let data = candidate
        .data()
        .iter()
        .zip(center.data())
        .map(|(&c, &z)| c.clamp(z - epsilon, z + epsilon))
        .collect();
    Ok(Mat::from_vec(candidate.rows(), candidate.cols(), data))
}

/// Iterated signed-gradient ascent on the representation:
/// start uniform in the ball, step by `alpha * sign(grad)`, project after
/// every step. Returns the final iterate.
pub fn pgd_attack<A: Acoustic>(
    z_clean: &Mat,
    ids: &[usize],
    model: &A,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<Mat> {
    cfg.validate()?;
    let mut x = uniform_init(z_clean, cfg.epsilon, rng);
    for _ in 0..cfg.steps {
        let (_, grad) = model.ctc_input_grad(&x, ids)?;
        let stepped = Mat::from_vec(
            x.rows(),
            x.cols(),
            x.data()
                .iter()
                .zip(grad.data())
                .map(|(&v, &g)| v + cfg.alpha * sign(g))
                .collect(),
        );
        x = project_ball(&stepped, z_clean, cfg.epsilon)?;
    }
    Ok(x)
}

/// Waveform-space PGD baseline: the gradient flows through the frozen
/// frontend back to the samples. The adversarial waveform stays inside
/// the epsilon-ball around the clean samples and inside [-1, 1].
pub fn pgd_attack_waveform(
    x: &Waveform,
    ids: &[usize],
    state: &ModelState,
    frontend: &Frontend,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    cfg.validate()?;
    let clean = x.samples();
    let mut adv: Vec<f64> = if cfg.epsilon == 0.0 {
        clean.to_vec()
    } else {
        clean
            .iter()
            .map(|&s| (s + rng.gen_range(-cfg.epsilon..=cfg.epsilon)).clamp(-1.0, 1.0))
            .collect()
    };
    for _ in 0..cfg.steps {
        let wave = Waveform::new(adv.clone(), x.sample_rate_hz())?;
        let (logits, tape) = model::forward(&frontend.tokenize(&wave)?.frames, state)?;
        let (_, grad_logits) = ctc::ctc_forward(&logits, ids)?;
        let (_, grad_frames) = model::backward(&tape, &grad_logits)?;
        let grad_samples = frontend.input_grad(&wave, &grad_frames)?;
        for (i, a) in adv.iter_mut().enumerate() {
            let stepped = *a + cfg.alpha * sign(grad_samples[i]);
            *a = stepped
                .clamp(clean[i] - cfg.epsilon, clean[i] + cfg.epsilon)
                .clamp(-1.0, 1.0);
        }
    }
    Waveform::new(adv, x.sample_rate_hz())
}

/// Guidance loss: negative mean per-frame KL between the prediction
/// distributions at `z1` and `z2`, truncated to the shorter frame count.
/// Returns the value and its gradient with respect to `z1` only (`z2` is
/// treated as a constant).
pub fn wag_loss<A: Acoustic>(z1: &Mat, z2: &Mat, model: &A) -> Result<(f64, Mat)> {
    let logits1 = model.logits(z1)?;
    let logits2 = model.logits(z2)?;
    let t_min = logits1.rows().min(logits2.rows());
    let lp1 = ctc::log_softmax_rows(&logits1.truncate_rows(t_min));
    let lp2 = ctc::log_softmax_rows(&logits2.truncate_rows(t_min));
    let classes = logits1.cols();

    let mut value = 0.0;
    let mut grad_logits1 = Mat::zeros(logits1.rows(), classes);
    for t in 0..t_min {
        let (r1, r2) = (lp1.row(t), lp2.row(t));
        let mut kl_t = 0.0;
        for k in 0..classes {
            kl_t += r1[k].exp() * (r1[k] - r2[k]);
        }
        value += kl_t;
        // d(-KL)/dlogit_j = -p_j * ((lp1_j - lp2_j) - KL_t)
        let g = grad_logits1.row_mut(t);
        for k in 0..classes {
            g[k] = -(r1[k].exp()) * ((r1[k] - r2[k]) - kl_t);
        }
    }
    let scale = 1.0 / t_min as f64;
    value = -value * scale;
    for g in grad_logits1.data_mut() {
        *g *= scale;
    }
    let grad_z1 = model.input_grad_from_logit_grad(z1, &grad_logits1)?;
    Ok((value, grad_z1))
}

/// Per-attack diagnostics. `adv_loss` is filled by whoever runs the
/// training forward at the emitted adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackTrace {
    /// CTC loss at the ball-sampled starting point.
    pub init_loss: f64,
    /// Value of the guidance term (zero when guidance is off).
    pub wag_term: f64,
    /// Sup-norm of the raw ascent direction before the sign step.
    pub delta_linf: f64,
}

/// Single-step attack on the clean representation:
/// `z_hat = project(z0 + eps * sign(grad L_ctc(z0)))` with `z0` uniform in
/// the ball.
pub fn pat_step<A: Acoustic>(
    z_clean: &Mat,
    ids: &[usize],
    model: &A,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<(Mat, AttackTrace)> {
    cfg.validate()?;
    let z0 = uniform_init(z_clean, cfg.epsilon, rng);
    let (init_loss, grad) = model.ctc_input_grad(&z0, ids)?;
    let z_hat = signed_step_projected(&z0, &grad, z_clean, cfg.epsilon)?;
    Ok((
        z_hat,
        AttackTrace {
            init_loss,
            wag_term: 0.0,
            delta_linf: grad.linf_norm(),
        },
    ))
}

/// Guided single-step attack. The ascent direction on `z0` is the CTC
/// gradient plus `lambda` times the guidance gradient evaluated at the
/// candidate pair `(z0 + eps sign(eta1), za + eps sign(eta2))`; the
/// candidate offsets are treated as constants when differentiating.
///
/// Draw order: the ball init consumes the RNG first, then the transform
/// application, so a `lambda = 0` run emits exactly what `pat_step`
/// would under the same stream.
#[allow(clippy::too_many_arguments)]
pub fn wapat_step<A: Acoustic>(
    x: &Waveform,
    z_clean: &Mat,
    ids: &[usize],
    model: &A,
    frontend: &Frontend,
    cfg: &AttackConfig,
    transform: &AugmentKind,
    bank: &NoiseBank,
    rng: &mut impl Rng,
) -> Result<(Mat, AttackTrace)> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    let z0 = uniform_init(z_clean, eps, rng);

    let augmented = apply_transform(transform, x, bank, rng)?;
    let za = frontend.tokenize(&augmented)?.frames;

    let (init_loss, eta1) = model.ctc_input_grad(&z0, ids)?;
    let (_, eta2) = model.ctc_input_grad(&za, ids)?;

    let c1 = offset_by_sign(&z0, &eta1, eps);
    let c2 = offset_by_sign(&za, &eta2, eps);
    let (wag_term, wag_grad) = wag_loss(&c1, &c2, model)?;

    // delta = grad of [L_ctc(z0) + lambda * L_wag(c1, c2)] w.r.t. z0;
    // c1 = z0 + const, so the guidance gradient passes through unchanged
    let delta = Mat::from_vec(
        z0.rows(),
        z0.cols(),
        eta1.data()
            .iter()
            .zip(wag_grad.data())
            .map(|(&g, &w)| g + cfg.lambda * w)
            .collect(),
    );
    let z_hat = signed_step_projected(&z0, &delta, z_clean, eps)?;
    Ok((
        z_hat,
        AttackTrace {
            init_loss,
            wag_term,
            delta_linf: delta.linf_norm(),
        },
    ))
}

fn offset_by_sign(base: &Mat, grad: &Mat, eps: f64) -> Mat {
    Mat::from_vec(
        base.rows(),
        base.cols(),
        base.data()
            .iter()
            .zip(grad.data())
            .map(|(&b, &g)| b + eps * sign(g))
            .collect(),
    )
}

fn signed_step_projected(z0: &Mat, direction: &Mat, center: &Mat, eps: f64) -> Result<Mat> {
    let stepped = offset_by_sign(z0, direction, eps);
    project_ball(&stepped, center, eps)
}
