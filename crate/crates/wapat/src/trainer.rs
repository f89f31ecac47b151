//! Outer minimization: batch assembly, per-batch transform sampling,
//! adversary generation, Adam updates, and the ablation matrix runner.
//!
//! Determinism contract: given (config, seed), the final checkpoint and
//! the training log are byte-identical across runs and thread counts.
//! Per-item randomness comes from counter-based streams, batch items are
//! mapped in parallel but reduced in index order, and the model is only
//! mutated between batches.

use std::collections::BTreeMap;
use std::fmt;

use crate::adversary::{pat_step, pgd_attack_waveform, wapat_step, Acoustic, AttackConfig};
use crate::audio_io::Waveform;
use crate::augment::{sample_transform, AugmentKind, NoiseBank};
use crate::ctc::{self, LabelSeq};
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendSpec};
use crate::mat::Mat;
use crate::metrics::{evaluate, EvalResult};
use crate::model::{adam_step, backward, forward, lr_at, ModelLayout, ModelState, ScheduleSpec};
use crate::par;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    NoAt,
    Pat,
    Wapat,
    WaveformAt,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::NoAt => "no_at",
            TrainMode::Pat => "pat",
            TrainMode::Wapat => "wapat",
            TrainMode::WaveformAt => "waveform_at",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_at" => Ok(TrainMode::NoAt),
            "pat" => Ok(TrainMode::Pat),
            "wapat" => Ok(TrainMode::Wapat),
            "waveform_at" => Ok(TrainMode::WaveformAt),
            other => Err(Error::arg(format!(
                "mode {other:?} is not one of no_at, pat, wapat, waveform_at"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub attack: AttackConfig,
    pub schedule: ScheduleSpec,
    pub batch_seconds: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub vocab: usize,
    pub hidden: usize,
    /// PGD steps for the waveform_at baseline.
    pub waveform_attack_steps: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        self.schedule.validate()?;
        // total_steps = 0 is allowed and returns the initial state
        if self.total_steps != 0 && self.schedule.total_steps != self.total_steps {
            return Err(Error::arg(
                "train.total_steps and schedule.total_steps disagree",
            ));
        }
        if self.batch_seconds <= 0.0 {
            return Err(Error::arg("train.batch_seconds must be positive"));
        }
        if self.vocab == 0 {
            return Err(Error::arg("train.vocab must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::arg("train.hidden must be positive"));
        }
        if self.waveform_attack_steps == 0 {
            return Err(Error::arg("train.waveform_attack_steps must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub mode: TrainMode,
    /// Tag of the batch transform (wapat only), `-` otherwise.
    pub transform: &'static str,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub wag_term: f64,
    pub skipped: usize,
}

pub fn render_log_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("step,lr,mode,transform,clean_loss,adv_loss,wag_term\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.8e},{},{},{:.8e},{:.8e},{:.8e}\n",
            r.step, r.lr, r.mode, r.transform, r.clean_loss, r.adv_loss, r.wag_term
        ));
    }
    out
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub log: Vec<StepRecord>,
    pub skipped_total: usize,
}

struct PreparedItem {
    wave: Waveform,
    ids: Vec<usize>,
    z_clean: Mat,
    duration_s: f64,
}

struct ItemResult {
    grad: Vec<f64>,
    clean_loss: f64,
    adv_loss: f64,
    wag_term: f64,
}

/// Train a fresh model on `corpus` under `cfg`. CTC-infeasible
/// utterances are skipped and counted, never trained on.
pub fn train(
    cfg: &TrainConfig,
    corpus: &[(Waveform, LabelSeq)],
    frontend_spec: &FrontendSpec,
    bank: &NoiseBank,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    frontend_spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::arg("train: empty corpus"));
    }
    let rate = corpus[0].0.sample_rate_hz();
    if corpus.iter().any(|(w, _)| w.sample_rate_hz() != rate) {
        return Err(Error::arg("train: corpus mixes sample rates"));
    }
    let frontend = Frontend::new(frontend_spec, rate)?;
    let layout = ModelLayout {
        input_dim: frontend_spec.d,
        hidden: cfg.hidden,
        vocab: cfg.vocab,
    };
    let mut state = ModelState::init(layout, cfg.seed);

    // tokenize the clean corpus once; the clean representation of an
    // utterance never changes across epochs
    let prepared: Vec<Result<Option<PreparedItem>>> = par::map_indexed(corpus, |_, (wave, label)| {
        if label.ids.iter().any(|&id| id >= cfg.vocab) {
            return Err(Error::arg(format!(
                "train: label id outside vocab {}",
                cfg.vocab
            )));
        }
        let repr = match frontend.tokenize(wave) {
            Ok(r) => r,
            Err(Error::InvalidArg(_)) => return Ok(None), // too short: skip
            Err(e) => return Err(e),
        };
        if repr.n_frames() < ctc::min_frames(&label.ids) {
            return Ok(None);
        }
        Ok(Some(PreparedItem {
            wave: wave.clone(),
            ids: label.ids.clone(),
            z_clean: repr.frames,
            duration_s: wave.duration_seconds(),
        }))
    });
    let mut items = Vec::new();
    let mut skipped_total = 0usize;
    for p in prepared {
        match p? {
            Some(item) => items.push(item),
            None => skipped_total += 1,
        }
    }
    if items.is_empty() {
        return Err(Error::arg("train: no feasible utterances in corpus"));
    }

    let mut log = Vec::with_capacity(cfg.total_steps);
    let mut cursor = 0usize;
    for step in 0..cfg.total_steps {
        // round-robin batch up to batch_seconds, at least one item
        let mut batch: Vec<usize> = Vec::new();
        let mut seconds = 0.0;
        loop {
            let idx = cursor % items.len();
            let dur = items[idx].duration_s;
            if !batch.is_empty() && seconds + dur > cfg.batch_seconds {
                break;
            }
            batch.push(idx);
            seconds += dur;
            cursor += 1;
            if batch.len() == items.len() {
                break; // never batch the same utterance twice per step
            }
        }

        // one transform per batch
        let transform = if cfg.mode == TrainMode::Wapat {
            let mut batch_rng = stream_rng(cfg.seed, &[stream::BATCH, step as u64]);
            Some(sample_transform(&mut batch_rng))
        } else {
            None
        };

        let results: Vec<Result<ItemResult>> = par::map_indexed(&batch, |_, &idx| {
            let item = &items[idx];
            let mut rng = stream_rng(cfg.seed, &[stream::ITEM, step as u64, idx as u64]);
            run_item(cfg, &state, &frontend, bank, item, transform.as_ref(), &mut rng)
        });

        // ordered reduction keeps float sums thread-count independent
        let mut grad = vec![0.0; state.params.len()];
        let (mut clean_sum, mut adv_sum, mut wag_sum) = (0.0, 0.0, 0.0);
        let mut step_skipped = 0usize;
        let mut used = 0usize;
        for r in results {
            match r {
                Ok(item) => {
                    for (g, gi) in grad.iter_mut().zip(&item.grad) {
                        *g += gi;
                    }
                    clean_sum += item.clean_loss;
                    adv_sum += item.adv_loss;
                    wag_sum += item.wag_term;
                    used += 1;
                }
                Err(Error::CtcInfeasible { .. }) => step_skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            skipped_total += step_skipped;
            continue; // whole batch infeasible; nothing to learn from
        }
        let inv = 1.0 / used as f64;
        for g in &mut grad {
            *g *= inv;
        }
        let (clean_loss, adv_loss, wag_term) =
            (clean_sum * inv, adv_sum * inv, wag_sum * inv);
        if !adv_loss.is_finite() || !clean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }

        let lr = lr_at(&cfg.schedule, step)?;
        adam_step(&mut state, &grad, lr)?;
        skipped_total += step_skipped;
        log.push(StepRecord {
            step,
            lr,
            mode: cfg.mode,
            transform: transform.as_ref().map_or("-", AugmentKind::tag),
            clean_loss,
            adv_loss,
            wag_term,
            skipped: step_skipped,
        });
    }

    Ok(TrainOutcome {
        state,
        log,
        skipped_total,
    })
}

/// Loss, gradient, and diagnostics for one batch item against a frozen
/// parameter snapshot.
fn run_item(
    cfg: &TrainConfig,
    state: &ModelState,
    frontend: &Frontend,
    bank: &NoiseBank,
    item: &PreparedItem,
    transform: Option<&AugmentKind>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ItemResult> {
    // representation the parameters are trained on
    let (z_train, wag_term) = match cfg.mode {
        TrainMode::NoAt => (item.z_clean.clone(), 0.0),
        TrainMode::Pat => {
            let (z_hat, trace) = pat_step(&item.z_clean, &item.ids, state, &cfg.attack, rng)?;
            (z_hat, trace.wag_term)
        }
        TrainMode::Wapat => {
            let da = transform.expect("wapat batch always samples a transform");
            let (z_hat, trace) = wapat_step(
                &item.wave,
                &item.z_clean,
                &item.ids,
                state,
                frontend,
                &cfg.attack,
                da,
                bank,
                rng,
            )?;
            (z_hat, trace.wag_term)
        }
        TrainMode::WaveformAt => {
            let wf_cfg = AttackConfig {
                steps: cfg.waveform_attack_steps,
                ..cfg.attack.clone()
            };
            let adv = pgd_attack_waveform(&item.wave, &item.ids, state, frontend, &wf_cfg, rng)?;
            let repr = frontend.tokenize(&adv)?;
            if repr.n_frames() < ctc::min_frames(&item.ids) {
                return Err(Error::CtcInfeasible {
                    needed: ctc::min_frames(&item.ids),
                    got: repr.n_frames(),
                });
            }
            (repr.frames, 0.0)
        }
    };

    let (logits, tape) = forward(&z_train, state)?;
    let (adv_loss, grad_logits) = ctc::ctc_forward(&logits, &item.ids)?;
    let (grad, _) = backward(&tape, &grad_logits)?;
    let clean_loss = match cfg.mode {
        TrainMode::NoAt => adv_loss,
        _ => state.ctc_loss(&item.z_clean, &item.ids)?,
    };
    Ok(ItemResult {
        grad,
        clean_loss,
        adv_loss,
        wag_term,
    })
}

/// One cell of the ablation matrix.
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub label: String,
    pub mode: TrainMode,
    pub epsilon: f64,
}

#[derive(Debug)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// Per-cell failures are contained; sibling rows still run.
    pub outcome: Result<EvalResult>,
    pub final_clean_loss: Option<f64>,
}

/// Train every variant from the same seed (hence the same initial
/// parameter vector) and evaluate on shared suites.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[AblationVariant],
    corpus: &[(Waveform, LabelSeq)],
    suites: &BTreeMap<String, Vec<(Waveform, LabelSeq)>>,
    in_domain: &str,
    frontend_spec: &FrontendSpec,
    bank: &NoiseBank,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::arg("run_ablation: no variants"));
    }
    let frontend = Frontend::new(frontend_spec, corpus[0].0.sample_rate_hz())?;
    let rows = variants
        .iter()
        .map(|v| {
            let cfg = TrainConfig {
                mode: v.mode,
                attack: AttackConfig {
                    epsilon: v.epsilon,
                    alpha: v.epsilon,
                    guidance: v.mode == TrainMode::Wapat,
                    ..base.attack.clone()
                },
                ..base.clone()
            };
            let outcome = train(&cfg, corpus, frontend_spec, bank).and_then(|out| {
                let eval = evaluate(&out.state, &frontend, suites, in_domain)?;
                Ok((eval, out.log.last().map(|r| r.clean_loss)))
            });
            match outcome {
                Ok((eval, last)) => AblationRow {
                    variant: v.clone(),
                    outcome: Ok(eval),
                    final_clean_loss: last,
                },
                Err(e) => AblationRow {
                    variant: v.clone(),
                    outcome: Err(e),
                    final_clean_loss: None,
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Human-readable matrix: label, clean WER, macro OOD WER per row.
pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant            epsilon  clean_wer%  macro_ood_wer%\n");
    for row in rows {
        match &row.outcome {
            Ok(eval) => out.push_str(&format!(
                "{:<18} {:>7} {:>11.2} {:>15.2}\n",
                row.variant.label,
                row.variant.epsilon,
                100.0 * eval.in_domain,
                100.0 * eval.macro_score
            )),
            Err(e) => out.push_str(&format!(
                "{:<18} {:>7} FAILED: {e}\n",
                row.variant.label, row.variant.epsilon
            )),
        }
    }
    out
}
