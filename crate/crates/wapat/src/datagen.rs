//! Synthetic desk-scale corpora: a clean tone-sequence training domain
//! plus held-out domains with distinct perturbation profiles, and
//! manifest handling for user-supplied WAVs.
//!
//! Each vocabulary symbol is a fixed-frequency tone template; an
//! utterance is the concatenation of its symbols' templates. Every
//! utterance is deterministic given (spec.seed, utterance index).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::audio_io::{read_wav, write_wav, Waveform, CANONICAL_SAMPLE_RATE};
use crate::augment::{
    add_noise, band_reject, make_rir, pitch_shift, reverb, NoiseBank, RoomSpec,
    SPEED_OF_SOUND_MPS,
};
use crate::ctc::LabelSeq;
use crate::error::{Error, Result};
use crate::metrics::render_words;
use crate::par;
use crate::rng::{stream, stream_rng};

/// One perturbation in a held-out domain profile, with the ranges it
/// draws from per utterance.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainAugment {
    Noise { snr_lo: f64, snr_hi: f64 },
    Reverb { absorb_lo: f64, absorb_hi: f64 },
    Pitch { cents_lo: f64, cents_hi: f64 },
    BandNotch { center_lo: f64, center_hi: f64, width_hz: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    /// Inclusive range of symbols per utterance.
    pub utt_len: (usize, usize),
    pub n_utterances: usize,
    pub tone_base_hz: f64,
    pub tone_step_hz: f64,
    pub symbol_ms: f64,
    pub ramp_ms: f64,
    pub amplitude: f64,
    pub sample_rate_hz: u32,
    pub domain_profile: Vec<DomainAugment>,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn clean(vocab_size: usize, n_utterances: usize, seed: u64) -> Self {
        CorpusSpec {
            vocab_size,
            utt_len: (3, 5),
            n_utterances,
            tone_base_hz: 300.0,
            tone_step_hz: 200.0,
            symbol_ms: 120.0,
            ramp_ms: 10.0,
            amplitude: 0.6,
            sample_rate_hz: CANONICAL_SAMPLE_RATE,
            domain_profile: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::arg("corpus.vocab_size must be positive"));
        }
        if self.n_utterances == 0 {
            return Err(Error::arg("corpus.n_utterances must be positive"));
        }
        if self.utt_len.0 == 0 || self.utt_len.0 > self.utt_len.1 {
            return Err(Error::arg("corpus.utt_len must be a nonempty range"));
        }
        if self.symbol_ms < 30.0 {
            return Err(Error::arg(
                "corpus.symbol_ms must cover at least one frontend window (>= 30 ms)",
            ));
        }
        if !(0.0 < self.amplitude && self.amplitude <= 1.0) {
            return Err(Error::arg("corpus.amplitude must lie in (0, 1]"));
        }
        let top = self.symbol_hz(self.vocab_size - 1);
        if top >= self.sample_rate_hz as f64 / 2.0 {
            return Err(Error::arg(format!(
                "corpus: symbol frequency {top} Hz reaches Nyquist"
            )));
        }
        Ok(())
    }

    pub fn symbol_hz(&self, id: usize) -> f64 {
        self.tone_base_hz + self.tone_step_hz * id as f64
    }
}

/// Tone template for one symbol: fixed fundamental with raised-cosine
/// ramps at both ends.
fn symbol_template(spec: &CorpusSpec, id: usize) -> Vec<f64> {
    let rate = spec.sample_rate_hz as f64;
    let n = (spec.symbol_ms / 1000.0 * rate).round() as usize;
    let ramp = ((spec.ramp_ms / 1000.0 * rate).round() as usize).min(n / 2);
    let freq = spec.symbol_hz(id);
    (0..n)
        .map(|i| {
            let envelope = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if i >= n - ramp {
                let j = n - 1 - i;
                0.5 - 0.5 * (std::f64::consts::PI * j as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            spec.amplitude * envelope * (std::f64::consts::TAU * freq * i as f64 / rate).sin()
        })
        .collect()
}

fn apply_domain_profile(
    w: Waveform,
    profile: &[DomainAugment],
    bank: &NoiseBank,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    let mut out = w;
    for entry in profile {
        out = match entry {
            DomainAugment::Noise { snr_lo, snr_hi } => {
                let snr = rng.gen_range(*snr_lo..=*snr_hi);
                let noise = bank.sample_noise(out.len(), out.sample_rate_hz(), rng);
                add_noise(&out, &noise, snr)?
            }
            DomainAugment::Reverb {
                absorb_lo,
                absorb_hi,
            } => {
                let room = RoomSpec {
                    dims_m: [
                        rng.gen_range(4.0..=9.0),
                        rng.gen_range(4.0..=9.0),
                        rng.gen_range(2.6..=4.0),
                    ],
                    source_m: [rng.gen_range(1.0..=2.0), rng.gen_range(1.0..=2.0), 1.5],
                    mic_m: [rng.gen_range(2.5..=3.5), rng.gen_range(2.5..=3.5), 1.5],
                    absorption: rng.gen_range(*absorb_lo..=*absorb_hi),
                    max_order: 6,
                    speed_of_sound_mps: SPEED_OF_SOUND_MPS,
                };
                let rir = make_rir(&room, out.sample_rate_hz())?;
                reverb(&out, &rir)?
            }
            DomainAugment::Pitch { cents_lo, cents_hi } => {
                pitch_shift(&out, rng.gen_range(*cents_lo..=*cents_hi))?
            }
            DomainAugment::BandNotch {
                center_lo,
                center_hi,
                width_hz,
            } => {
                let center = rng.gen_range(*center_lo..=*center_hi);
                band_reject(&out, center, *width_hz)?
            }
        };
    }
    Ok(out)
}

/// Generate the corpus: labels, rendered transcripts, and (optionally
/// domain-perturbed) audio.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<(Waveform, LabelSeq)>> {
    spec.validate()?;
    let templates: Vec<Vec<f64>> = (0..spec.vocab_size)
        .map(|id| symbol_template(spec, id))
        .collect();
    let bank = NoiseBank::synthetic_default();
    let items: Vec<Result<(Waveform, LabelSeq)>> = par::map_range(spec.n_utterances, |i| {
        let mut rng = stream_rng(spec.seed, &[stream::CORPUS_UTT, i as u64]);
        let len = rng.gen_range(spec.utt_len.0..=spec.utt_len.1);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.vocab_size)).collect();
        let mut samples = Vec::with_capacity(len * templates[0].len());
        for &id in &ids {
            samples.extend_from_slice(&templates[id]);
        }
        let clean = Waveform::new(samples, spec.sample_rate_hz)?;
        let wave = apply_domain_profile(clean, &spec.domain_profile, &bank, &mut rng)?;
        let words = render_words(&ids);
        Ok((wave, LabelSeq::new(ids, words)))
    });
    items.into_iter().collect()
}

/// The five shipped held-out domains. Ranges skew harder than typical
/// training-time draws so a clean-trained model visibly degrades.
pub fn default_domain_profiles() -> BTreeMap<String, Vec<DomainAugment>> {
    BTreeMap::from([
        (
            "dom_band".to_string(),
            vec![DomainAugment::BandNotch {
                center_lo: 350.0,
                center_hi: 2200.0,
                width_hz: 150.0,
            }],
        ),
        (
            "dom_combined".to_string(),
            vec![
                DomainAugment::Pitch {
                    cents_lo: -150.0,
                    cents_hi: 150.0,
                },
                DomainAugment::Reverb {
                    absorb_lo: 0.4,
                    absorb_hi: 0.7,
                },
                DomainAugment::Noise {
                    snr_lo: 5.0,
                    snr_hi: 15.0,
                },
            ],
        ),
        (
            "dom_noise".to_string(),
            vec![DomainAugment::Noise {
                snr_lo: 0.0,
                snr_hi: 10.0,
            }],
        ),
        (
            "dom_pitch".to_string(),
            vec![DomainAugment::Pitch {
                cents_lo: 150.0,
                cents_hi: 300.0,
            }],
        ),
        (
            "dom_reverb".to_string(),
            vec![DomainAugment::Reverb {
                absorb_lo: 0.15,
                absorb_hi: 0.4,
            }],
        ),
    ])
}

/// Load a `wav_path<TAB>transcript` manifest. Paths resolve relative to
/// the manifest's directory; the transcript is everything after the
/// first tab, verbatim.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<(Waveform, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (wav, transcript) = line.split_once('\t').ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason: "expected `wav_path<TAB>transcript`".into(),
        })?;
        let wave = read_wav(base.join(wav))?;
        out.push((wave, transcript.to_string()));
    }
    Ok(out)
}

/// Write a corpus as WAV files plus `manifest.tsv`; returns the manifest
/// path.
pub fn export_corpus(corpus: &[(Waveform, LabelSeq)], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, (wave, label)) in corpus.iter().enumerate() {
        let name = format!("utt_{i:05}.wav");
        write_wav(wave, dir.join(&name))?;
        manifest.push_str(&format!("{name}\t{}\n", label.words));
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FrontendSpec;

    #[test]
    fn unit_corpus_single_symbol() {
        let mut spec = CorpusSpec::clean(10, 1, 77);
        spec.utt_len = (1, 1);
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.len(), 1);
        let (wave, label) = &corpus[0];
        assert_eq!(label.ids.len(), 1);
        assert_eq!(wave.len(), (0.120 * 16000.0) as usize);
        assert_eq!(label.words, render_words(&label.ids));
    }

    #[test]
    fn clean_regeneration_bit_identical() {
        let spec = CorpusSpec::clean(10, 20, 123);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feasibility_frames_cover_labels() {
        let fe = FrontendSpec::default();
        for (name, profile) in default_domain_profiles() {
            let mut spec = CorpusSpec::clean(10, 30, 9);
            spec.domain_profile = profile;
            let corpus = generate_corpus(&spec).unwrap();
            for (wave, label) in corpus {
                let frames = fe.frame_count(wave.len(), wave.sample_rate_hz()).unwrap();
                assert!(
                    frames >= 2 * label.ids.len() + 1,
                    "{name}: {frames} frames for {} labels",
                    label.ids.len()
                );
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = CorpusSpec::clean(0, 10, 1);
        assert!(spec.validate().is_err());
        spec = CorpusSpec::clean(10, 10, 1);
        spec.symbol_ms = 10.0;
        assert!(spec.validate().is_err());
        spec = CorpusSpec::clean(50, 10, 1);
        assert!(spec.validate().is_err()); // top tone past Nyquist
    }

    #[test]
    fn manifest_round_trip_and_parse_rules() {
        let dir = std::env::temp_dir().join("wapat-datagen-tests");
        std::fs::create_dir_all(&dir).unwrap();

        let spec = CorpusSpec::clean(5, 3, 55);
        let corpus = generate_corpus(&spec).unwrap();
        let manifest = export_corpus(&corpus, dir.join("mini")).unwrap();
        let loaded = load_manifest(&manifest).unwrap();
        assert_eq!(loaded.len(), 3);
        for ((wave, label), (lwave, lwords)) in corpus.iter().zip(&loaded) {
            assert_eq!(&label.words, lwords);
            assert_eq!(wave.len(), lwave.len());
        }

        // empty file -> empty corpus
        let empty = dir.join("empty.tsv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_manifest(&empty).unwrap().is_empty());

        // extra tabs: transcript is everything after the first tab
        let extra = dir.join("extra.tsv");
        std::fs::write(&extra, "mini/utt_00000.wav\tw1\tw2\tw3\n").unwrap();
        let loaded = load_manifest(&extra).unwrap();
        assert_eq!(loaded[0].1, "w1\tw2\tw3");

        // tabless line reports its number
        let bad = dir.join("bad.tsv");
        std::fs::write(&bad, "mini/utt_00000.wav\tw1\nnotabshere\n").unwrap();
        match load_manifest(&bad) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected manifest error, got {other:?}"),
        }

        // missing wav file surfaces as an io error
        let missing = dir.join("missing.tsv");
        std::fs::write(&missing, "nope.wav\twords\n").unwrap();
        assert!(matches!(load_manifest(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn export_is_deterministic() {
        let dir = std::env::temp_dir().join("wapat-datagen-tests");
        let spec = CorpusSpec::clean(5, 4, 99);
        let corpus = generate_corpus(&spec).unwrap();
        export_corpus(&corpus, dir.join("det_a")).unwrap();
        export_corpus(&corpus, dir.join("det_b")).unwrap();
        for i in 0..4 {
            let name = format!("utt_{i:05}.wav");
            let a = std::fs::read(dir.join("det_a").join(&name)).unwrap();
            let b = std::fs::read(dir.join("det_b").join(&name)).unwrap();
            assert_eq!(a, b);
        }
    }
}
