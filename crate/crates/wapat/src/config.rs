//! Run configuration: one TOML file aggregating every knob. Unknown keys
//! are rejected so a typo in `epsilon` or `mode` cannot silently
//! invalidate an experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::datagen::CorpusSpec;
use crate::error::{Error, Result};
use crate::frontend::FrontendSpec;
use crate::model::ScheduleSpec;
use crate::trainer::{TrainConfig, TrainMode};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub frontend: FrontendSpec,
    pub schedule: ScheduleSection,
    pub attack: AttackSection,
    pub train: TrainSection,
    pub corpus: CorpusSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            frontend: FrontendSpec::default(),
            schedule: ScheduleSection::default(),
            attack: AttackSection::default(),
            train: TrainSection::default(),
            corpus: CorpusSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub lr_max: f64,
    pub phases: [f64; 3],
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            lr_max: 3e-3,
            phases: [0.1, 0.4, 0.5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub lambda: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            epsilon: 0.01,
            alpha: 0.01,
            steps: 1,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub batch_seconds: f64,
    pub total_steps: usize,
    pub hidden: usize,
    pub waveform_attack_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            mode: TrainMode::Wapat,
            batch_seconds: 20.0,
            total_steps: 2000,
            hidden: 128,
            waveform_attack_steps: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub vocab_size: usize,
    pub n_train: usize,
    /// Utterances per evaluation suite (val, test, and each domain).
    pub n_eval: usize,
    pub utt_len_min: usize,
    pub utt_len_max: usize,
    pub tone_base_hz: f64,
    pub tone_step_hz: f64,
    pub symbol_ms: f64,
    pub ramp_ms: f64,
    pub amplitude: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            vocab_size: 10,
            n_train: 400,
            n_eval: 50,
            utt_len_min: 3,
            utt_len_max: 5,
            tone_base_hz: 300.0,
            tone_step_hz: 200.0,
            symbol_ms: 120.0,
            ramp_ms: 10.0,
            amplitude: 0.6,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        if self.corpus.n_train == 0 {
            return Err(Error::arg("corpus.n_train must be positive"));
        }
        if self.corpus.n_eval == 0 {
            return Err(Error::arg("corpus.n_eval must be positive"));
        }
        self.corpus_spec(1, 0, &[]).validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Corpus spec for one split.
    pub fn corpus_spec(
        &self,
        n_utterances: usize,
        seed: u64,
        profile: &[crate::datagen::DomainAugment],
    ) -> CorpusSpec {
        let c = &self.corpus;
        CorpusSpec {
            vocab_size: c.vocab_size,
            utt_len: (c.utt_len_min, c.utt_len_max),
            n_utterances: n_utterances.max(1),
            tone_base_hz: c.tone_base_hz,
            tone_step_hz: c.tone_step_hz,
            symbol_ms: c.symbol_ms,
            ramp_ms: c.ramp_ms,
            amplitude: c.amplitude,
            sample_rate_hz: crate::audio_io::CANONICAL_SAMPLE_RATE,
            domain_profile: profile.to_vec(),
            seed,
        }
    }

    pub fn schedule_spec(&self) -> Result<ScheduleSpec> {
        ScheduleSpec::new(
            self.schedule.lr_max,
            self.schedule.phases,
            self.train.total_steps.max(1),
        )
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.attack.epsilon,
            alpha: self.attack.alpha,
            steps: self.attack.steps,
            guidance: self.train.mode == TrainMode::Wapat,
            lambda: self.attack.lambda,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train.mode,
            attack: self.attack_config(),
            schedule: ScheduleSpec {
                lr_max: self.schedule.lr_max,
                phases: self.schedule.phases,
                total_steps: self.train.total_steps.max(1),
            },
            batch_seconds: self.train.batch_seconds,
            total_steps: self.train.total_steps,
            seed: self.seed,
            vocab: self.corpus.vocab_size,
            hidden: self.train.hidden,
            waveform_attack_steps: self.train.waveform_attack_steps,
        }
    }
}
