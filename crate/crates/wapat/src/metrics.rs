//! Word error rate, cross-domain macro scoring, and drop-rate reports.
//!
//! Per-dataset WER is corpus-level: summed edit distance over summed
//! reference lengths, kept as an exact rational until rendering.

use std::collections::BTreeMap;

use crate::audio_io::Waveform;
use crate::ctc::{greedy_decode, LabelSeq};
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::model::{forward, ModelState};
use crate::par;

/// Exact WER tally: `edits / ref_words`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerCount {
    pub edits: usize,
    pub ref_words: usize,
}

impl WerCount {
    pub fn value(&self) -> f64 {
        self.edits as f64 / self.ref_words as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.value()
    }

    pub fn merge(&mut self, other: WerCount) {
        self.edits += other.edits;
        self.ref_words += other.ref_words;
    }
}

/// Levenshtein distance with unit costs over arbitrary token types.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// WER of one hypothesis against one reference.
pub fn wer(reference: &[&str], hypothesis: &[&str]) -> Result<WerCount> {
    if reference.is_empty() {
        return Err(Error::arg("wer: empty reference"));
    }
    Ok(WerCount {
        edits: edit_distance(reference, hypothesis),
        ref_words: reference.len(),
    })
}

/// Render a symbol id as its word token.
pub fn word_for_symbol(id: usize) -> String {
    format!("w{id}")
}

pub fn render_words(ids: &[usize]) -> String {
    ids.iter()
        .map(|&id| word_for_symbol(id))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inverse of [`word_for_symbol`] for vocabulary-rendered transcripts.
pub fn words_to_ids(words: &str, vocab: usize) -> Result<Vec<usize>> {
    words
        .split_whitespace()
        .map(|w| {
            w.strip_prefix('w')
                .and_then(|rest| rest.parse::<usize>().ok())
                .filter(|&id| id < vocab)
                .ok_or_else(|| {
                    Error::arg(format!(
                        "transcript token {w:?} is not a vocabulary word (w0..w{})",
                        vocab - 1
                    ))
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_dataset: BTreeMap<String, WerCount>,
    /// Mean of per-dataset WER over everything except the in-domain split.
    pub macro_score: f64,
    pub in_domain_name: String,
    pub in_domain: f64,
    /// Utterances that could not be decoded (frontend shorter than one
    /// window, etc.); scored as full deletions.
    pub decode_failures: usize,
}

/// Score a model over named suites. The suite named `in_domain` is
/// reported separately and excluded from the macro score.
pub fn evaluate(
    state: &ModelState,
    frontend: &Frontend,
    suites: &BTreeMap<String, Vec<(Waveform, LabelSeq)>>,
    in_domain: &str,
) -> Result<EvalResult> {
    if suites.is_empty() {
        return Err(Error::arg("evaluate: no suites given"));
    }
    if !suites.contains_key(in_domain) {
        return Err(Error::arg(format!(
            "evaluate: in-domain suite {in_domain:?} not present"
        )));
    }
    let mut per_dataset = BTreeMap::new();
    let mut decode_failures = 0usize;
    for (name, corpus) in suites {
        let scored: Vec<Result<WerCount>> = par::map_indexed(corpus, |_, (wave, label)| {
            let ref_words: Vec<&str> = label.words.split_whitespace().collect();
            if ref_words.is_empty() {
                return Err(Error::arg("evaluate: utterance with empty transcript"));
            }
            match frontend.tokenize(wave) {
                Ok(repr) => {
                    let (logits, _) = forward(&repr.frames, state)?;
                    let hyp_ids = greedy_decode(&logits);
                    let hyp_words: Vec<String> =
                        hyp_ids.iter().map(|&id| word_for_symbol(id)).collect();
                    let hyp_refs: Vec<&str> = hyp_words.iter().map(String::as_str).collect();
                    wer(&ref_words, &hyp_refs)
                }
                // undecodable utterance: counted, scored as all-deletions
                Err(Error::InvalidArg(_)) => Ok(WerCount {
                    edits: ref_words.len(),
                    ref_words: usize::MAX, // sentinel: marks a failure
                }),
                Err(e) => Err(e),
            }
        });
        let mut total = WerCount::default();
        for item in scored {
            let item = item?;
            if item.ref_words == usize::MAX {
                decode_failures += 1;
                total.merge(WerCount {
                    edits: item.edits,
                    ref_words: item.edits,
                });
            } else {
                total.merge(item);
            }
        }
        per_dataset.insert(name.clone(), total);
    }
    let ood: Vec<f64> = per_dataset
        .iter()
        .filter(|(name, _)| name.as_str() != in_domain)
        .map(|(_, w)| w.value())
        .collect();
    let macro_score = if ood.is_empty() {
        0.0
    } else {
        ood.iter().sum::<f64>() / ood.len() as f64
    };
    Ok(EvalResult {
        macro_score,
        in_domain_name: in_domain.to_string(),
        in_domain: per_dataset[in_domain].value(),
        per_dataset,
        decode_failures,
    })
}

/// Signed relative improvement per dataset: `100 (baseline - treated) /
/// baseline`. Positive means the treated model is better. `None` where
/// the baseline WER is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DropReport {
    pub per_dataset: BTreeMap<String, Option<f64>>,
    pub macro_drop: Option<f64>,
}

pub fn drop_rate(baseline: &EvalResult, treated: &EvalResult) -> Result<DropReport> {
    let keys: Vec<&String> = baseline.per_dataset.keys().collect();
    let treated_keys: Vec<&String> = treated.per_dataset.keys().collect();
    if keys != treated_keys {
        return Err(Error::arg("drop_rate: suite keys differ"));
    }
    let rate = |b: f64, t: f64| -> Option<f64> {
        if b == 0.0 {
            None
        } else {
            Some(100.0 * (b - t) / b)
        }
    };
    let per_dataset = baseline
        .per_dataset
        .iter()
        .map(|(name, b)| {
            let t = treated.per_dataset[name];
            (name.clone(), rate(b.value(), t.value()))
        })
        .collect();
    Ok(DropReport {
        per_dataset,
        macro_drop: rate(baseline.macro_score, treated.macro_score),
    })
}

/// `dataset,wer_percent` rows plus a trailing macro row.
pub fn render_wer_csv(result: &EvalResult) -> String {
    let mut out = String::from("dataset,wer_percent\n");
    for (name, w) in &result.per_dataset {
        out.push_str(&format!("{name},{:.4}\n", w.percent()));
    }
    out.push_str(&format!("macro,{:.4}\n", 100.0 * result.macro_score));
    out
}

/// Parse a WER csv back into (per-dataset percent, macro percent).
pub fn parse_wer_csv(text: &str) -> Result<(BTreeMap<String, f64>, f64)> {
    let mut per = BTreeMap::new();
    let mut macro_pct = None;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "dataset,wer_percent" {
                return Err(Error::arg(format!("unexpected wer csv header {line:?}")));
            }
            continue;
        }
        let (name, val) = line
            .split_once(',')
            .ok_or_else(|| Error::arg(format!("wer csv line {} malformed", i + 1)))?;
        let v: f64 = val
            .parse()
            .map_err(|_| Error::arg(format!("wer csv line {}: bad number {val:?}", i + 1)))?;
        if name == "macro" {
            macro_pct = Some(v);
        } else {
            per.insert(name.to_string(), v);
        }
    }
    let macro_pct = macro_pct.ok_or_else(|| Error::arg("wer csv missing macro row"))?;
    Ok((per, macro_pct))
}

/// Drop-rate table with signed percents at two decimals; `na` where the
/// baseline is zero.
pub fn render_drop_csv(report: &DropReport) -> String {
    let cell = |v: &Option<f64>| match v {
        Some(x) => format!("{x:+.2}"),
        None => "na".to_string(),
    };
    let mut out = String::from("dataset,drop_percent\n");
    for (name, v) in &report.per_dataset {
        out.push_str(&format!("{name},{}\n", cell(v)));
    }
    out.push_str(&format!("macro,{}\n", cell(&report.macro_drop)));
    out
}

/// Drop rates straight from two rendered WER csv files.
pub fn drop_from_csv(baseline: &str, treated: &str) -> Result<String> {
    let (base_per, base_macro) = parse_wer_csv(baseline)?;
    let (treat_per, treat_macro) = parse_wer_csv(treated)?;
    if base_per.keys().collect::<Vec<_>>() != treat_per.keys().collect::<Vec<_>>() {
        return Err(Error::arg("drop report: dataset names differ"));
    }
    let rate = |b: f64, t: f64| if b == 0.0 { None } else { Some(100.0 * (b - t) / b) };
    let report = DropReport {
        per_dataset: base_per
            .iter()
            .map(|(name, &b)| (name.clone(), rate(b, treat_per[name])))
            .collect(),
        macro_drop: rate(base_macro, treat_macro),
    };
    Ok(render_drop_csv(&report))
}
