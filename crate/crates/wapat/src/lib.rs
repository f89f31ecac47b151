//! Desk-scale laboratory for adversarially robust CTC speech recognition.
//!
//! The crate trains a small acoustic model on synthetic cross-domain
//! corpora and compares plain training against single-step adversarial
//! training on a frozen phoneme-style representation, optionally guided
//! by waveform augmentation. Everything is deterministic given a seed,
//! including under data-parallel execution.

pub mod adversary;
pub mod audio_io;
pub mod augment;
pub mod config;
pub mod ctc;
pub mod datagen;
pub mod error;
pub mod frontend;
pub mod mat;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use mat::Mat;
