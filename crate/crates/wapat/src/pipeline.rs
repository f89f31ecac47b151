//! File-level command implementations shared by the CLI and the
//! end-to-end tests: generate corpora to disk, train to a checkpoint +
//! log, evaluate to WER/drop reports. No artifact contains a timestamp,
//! so (config, seed) fully determines every output byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::audio_io::Waveform;
use crate::config::RunConfig;
use crate::ctc::LabelSeq;
use crate::datagen::{default_domain_profiles, export_corpus, generate_corpus, load_manifest};
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::metrics::{
    drop_from_csv, evaluate, render_wer_csv, words_to_ids, EvalResult,
};
use crate::model::ModelState;
use crate::augment::NoiseBank;
use crate::trainer::{render_log_csv, train};

pub const IN_DOMAIN_SUITE: &str = "clean";

/// Split seeds derive from the run seed with fixed offsets; domain splits
/// hash their name so adding a domain never reshuffles the others.
fn split_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = master ^ 0xa076_1d64_78bd_642f;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    h
}

pub fn corpora_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("corpora")
}

/// Generate train/val/test plus the five held-out domain corpora and
/// write them all under `<out>/corpora/<split>/`.
pub fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let base = corpora_dir(out_dir);
    let mut manifests = Vec::new();
    let mut splits: Vec<(String, usize, Vec<crate::datagen::DomainAugment>)> = vec![
        ("train".into(), cfg.corpus.n_train, Vec::new()),
        ("val".into(), cfg.corpus.n_eval, Vec::new()),
        ("test".into(), cfg.corpus.n_eval, Vec::new()),
    ];
    for (name, profile) in default_domain_profiles() {
        splits.push((name, cfg.corpus.n_eval, profile));
    }
    for (name, n, profile) in splits {
        let spec = cfg.corpus_spec(n, split_seed(cfg.seed, &name), &profile);
        let corpus = generate_corpus(&spec)?;
        manifests.push(export_corpus(&corpus, base.join(&name))?);
    }
    Ok(manifests)
}

/// Load one generated split back as training/eval items.
pub fn load_split(cfg: &RunConfig, out_dir: &Path, split: &str) -> Result<Vec<(Waveform, LabelSeq)>> {
    let manifest = corpora_dir(out_dir).join(split).join("manifest.tsv");
    let raw = load_manifest(&manifest)?;
    raw.into_iter()
        .map(|(wave, words)| {
            let ids = words_to_ids(&words, cfg.corpus.vocab_size)?;
            Ok((wave, LabelSeq::new(ids, words)))
        })
        .collect()
}

/// All evaluation suites: the clean test split plus every `dom_*` split.
pub fn load_suites(
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<BTreeMap<String, Vec<(Waveform, LabelSeq)>>> {
    let mut suites = BTreeMap::new();
    suites.insert(IN_DOMAIN_SUITE.to_string(), load_split(cfg, out_dir, "test")?);
    for name in default_domain_profiles().keys() {
        suites.insert(name.clone(), load_split(cfg, out_dir, name)?);
    }
    Ok(suites)
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub final_clean_loss: f64,
    pub mode: crate::trainer::TrainMode,
    pub epsilon: f64,
    pub skipped: usize,
}

impl TrainSummary {
    /// The one-line summary printed after training.
    pub fn line(&self) -> String {
        format!(
            "final_clean_loss={:.6} mode={} epsilon={} skipped={}",
            self.final_clean_loss, self.mode, self.epsilon, self.skipped
        )
    }
}

/// Train on `<out>/corpora/train`, writing `checkpoint.bin` and
/// `train_log.csv` into `out_dir`. Nothing is written if training fails.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let corpus = load_split(cfg, out_dir, "train")?;
    let bank = NoiseBank::synthetic_default();
    let outcome = train(&cfg.train_config(), &corpus, &cfg.frontend, &bank)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint = out_dir.join("checkpoint.bin");
    outcome.state.save(&checkpoint)?;
    let log_path = out_dir.join("train_log.csv");
    std::fs::write(&log_path, render_log_csv(&outcome.log))
        .map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainSummary {
        checkpoint,
        log_path,
        final_clean_loss: outcome.log.last().map_or(f64::NAN, |r| r.clean_loss),
        mode: cfg.train.mode,
        epsilon: cfg.attack.epsilon,
        skipped: outcome.skipped_total,
    })
}

/// Evaluate a checkpoint over the generated suites; writes `wer.csv` and,
/// given a baseline WER csv, `drop.csv`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    out_dir: &Path,
    baseline_csv: Option<&Path>,
) -> Result<EvalResult> {
    cfg.validate()?;
    let state = ModelState::load(checkpoint)?;
    let suites = load_suites(cfg, out_dir)?;
    let rate = suites[IN_DOMAIN_SUITE][0].0.sample_rate_hz();
    let frontend = Frontend::new(&cfg.frontend, rate)?;
    let result = evaluate(&state, &frontend, &suites, IN_DOMAIN_SUITE)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let wer_path = out_dir.join("wer.csv");
    std::fs::write(&wer_path, render_wer_csv(&result)).map_err(|e| Error::io(&wer_path, e))?;
    if let Some(baseline) = baseline_csv {
        let base_text =
            std::fs::read_to_string(baseline).map_err(|e| Error::io(baseline, e))?;
        let drop = drop_from_csv(&base_text, &render_wer_csv(&result))?;
        let drop_path = out_dir.join("drop.csv");
        std::fs::write(&drop_path, drop).map_err(|e| Error::io(&drop_path, e))?;
    }
    Ok(result)
}

/// Drop-rate table from two WER csv files; writes `drop.csv` under
/// `out_dir` and returns the rendered table.
pub fn cmd_report(baseline_csv: &Path, treated_csv: &Path, out_dir: &Path) -> Result<String> {
    let base = std::fs::read_to_string(baseline_csv).map_err(|e| Error::io(baseline_csv, e))?;
    let treated = std::fs::read_to_string(treated_csv).map_err(|e| Error::io(treated_csv, e))?;
    let table = drop_from_csv(&base, &treated)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("drop.csv");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> RunConfig {
        RunConfig::parse(
            r#"
seed = 7
[corpus]
vocab_size = 5
n_train = 6
n_eval = 3
utt_len_min = 2
utt_len_max = 3
[train]
mode = "no_at"
total_steps = 4
batch_seconds = 2.0
hidden = 10
"#,
        )
        .unwrap()
    }

    #[test]
    fn generate_train_evaluate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_config();
        let manifests = cmd_generate(&cfg, dir.path()).unwrap();
        assert_eq!(manifests.len(), 8); // train/val/test + 5 domains
        for m in &manifests {
            assert!(m.exists());
        }
        let summary = cmd_train(&cfg, dir.path()).unwrap();
        assert!(summary.checkpoint.exists());
        assert!(summary.log_path.exists());
        assert!(summary.line().contains("mode=no_at"));

        let result = cmd_evaluate(&cfg, &summary.checkpoint, dir.path(), None).unwrap();
        assert_eq!(result.per_dataset.len(), 6);
        let wer_csv = dir.path().join("wer.csv");
        assert!(wer_csv.exists());

        // drop rate of a report against itself is all zeros
        let table = cmd_report(&wer_csv, &wer_csv, dir.path()).unwrap();
        for line in table.lines().skip(1) {
            assert!(line.ends_with(",+0.00"), "{line}");
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = quick_config();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        cmd_generate(&cfg, a.path()).unwrap();
        cmd_generate(&cfg, b.path()).unwrap();
        let manifest_a =
            std::fs::read(corpora_dir(a.path()).join("train/manifest.tsv")).unwrap();
        let manifest_b =
            std::fs::read(corpora_dir(b.path()).join("train/manifest.tsv")).unwrap();
        assert_eq!(manifest_a, manifest_b);
        let wav_a = std::fs::read(corpora_dir(a.path()).join("dom_noise/utt_00000.wav")).unwrap();
        let wav_b = std::fs::read(corpora_dir(b.path()).join("dom_noise/utt_00000.wav")).unwrap();
        assert_eq!(wav_a, wav_b);
    }

    #[test]
    fn train_without_corpora_fails_without_partial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_config();
        assert!(cmd_train(&cfg, dir.path()).is_err());
        assert!(!dir.path().join("checkpoint.bin").exists());
    }
}
