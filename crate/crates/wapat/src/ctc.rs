//! Connectionist Temporal Classification: log-space forward-backward with
//! analytic logit gradients, greedy best-path decoding, and an exhaustive
//! path-enumeration oracle for small instances.
//!
//! Convention: logits are `T x (V+1)` with the blank in the last column.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// A target transcription: symbol ids over `[0, V)` plus the word-level
/// rendering used for WER.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeq {
    pub ids: Vec<usize>,
    pub words: String,
}

impl LabelSeq {
    pub fn new(ids: Vec<usize>, words: impl Into<String>) -> Self {
        LabelSeq {
            ids,
            words: words.into(),
        }
    }
}

/// Minimum frame count that can emit `ids`: one frame per symbol plus a
/// separating blank per adjacent repeat.
pub fn min_frames(ids: &[usize]) -> usize {
    let repeats = ids.windows(2).filter(|w| w[0] == w[1]).count();
    ids.len() + repeats
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn logsumexp3(a: f64, b: f64, c: f64) -> f64 {
    logsumexp2(logsumexp2(a, b), c)
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}

/// Row-wise softmax; each row is normalized to sum to one.
pub fn frame_posteriors(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

fn validate_target(logits: &Mat, ids: &[usize]) -> Result<()> {
    let classes = logits.cols();
    if classes < 2 {
        return Err(Error::arg("logits need at least 2 classes (one symbol + blank)"));
    }
    let vocab = classes - 1;
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::arg(format!(
            "label id {bad} outside vocabulary of size {vocab}"
        )));
    }
    let needed = min_frames(ids);
    if logits.rows() < needed {
        return Err(Error::CtcInfeasible {
            needed,
            got: logits.rows(),
        });
    }
    Ok(())
}

/// CTC loss only (no gradient): `-log P(ids | softmax(logits))`.
pub fn ctc_loss(logits: &Mat, ids: &[usize]) -> Result<f64> {
    validate_target(logits, ids)?;
    let lp = log_softmax_rows(logits);
    let alpha = forward_lattice(&lp, ids);
    let (t_frames, s_len) = (lp.rows(), 2 * ids.len() + 1);
    let mut log_p = alpha[(t_frames - 1, s_len - 1)];
    if s_len >= 2 {
        log_p = logsumexp2(log_p, alpha[(t_frames - 1, s_len - 2)]);
    }
    Ok(-log_p)
}

/// CTC loss and its gradient with respect to the logits
/// (softmax minus lattice posteriors).
pub fn ctc_forward(logits: &Mat, ids: &[usize]) -> Result<(f64, Mat)> {
    validate_target(logits, ids)?;
    let lp = log_softmax_rows(logits);
    let t_frames = lp.rows();
    let classes = lp.cols();
    let blank = classes - 1;
    let s_len = 2 * ids.len() + 1;
    let ext = extended_labels(ids, blank);

    let alpha = forward_lattice(&lp, ids);
    let mut log_p = alpha[(t_frames - 1, s_len - 1)];
    if s_len >= 2 {
        log_p = logsumexp2(log_p, alpha[(t_frames - 1, s_len - 2)]);
    }

    // beta[t][s]: future paths from state s at frame t, excluding the
    // emission at frame t itself.
    let mut beta = Mat::from_vec(t_frames, s_len, vec![f64::NEG_INFINITY; t_frames * s_len]);
    beta[(t_frames - 1, s_len - 1)] = 0.0;
    if s_len >= 2 {
        beta[(t_frames - 1, s_len - 2)] = 0.0;
    }
    for t in (0..t_frames - 1).rev() {
        for s in 0..s_len {
            let stay = beta[(t + 1, s)] + lp[(t + 1, ext[s])];
            let step = if s + 1 < s_len {
                beta[(t + 1, s + 1)] + lp[(t + 1, ext[s + 1])]
            } else {
                f64::NEG_INFINITY
            };
            let skip = if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                beta[(t + 1, s + 2)] + lp[(t + 1, ext[s + 2])]
            } else {
                f64::NEG_INFINITY
            };
            beta[(t, s)] = logsumexp3(stay, step, skip);
        }
    }

    // grad = softmax - sum of state posteriors mapped to each class
    let mut grad = frame_posteriors(logits);
    for t in 0..t_frames {
        for (s, &sym) in ext.iter().enumerate() {
            let g = alpha[(t, s)] + beta[(t, s)] - log_p;
            if g != f64::NEG_INFINITY {
                grad[(t, sym)] -= g.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

fn extended_labels(ids: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * ids.len() + 1);
    ext.push(blank);
    for &id in ids {
        ext.push(id);
        ext.push(blank);
    }
    ext
}

/// alpha[t][s]: paths emitting the lattice prefix through state s at
/// frame t, including frame t's emission. Log domain.
fn forward_lattice(lp: &Mat, ids: &[usize]) -> Mat {
    let t_frames = lp.rows();
    let blank = lp.cols() - 1;
    let ext = extended_labels(ids, blank);
    let s_len = ext.len();
    let mut alpha = Mat::from_vec(t_frames, s_len, vec![f64::NEG_INFINITY; t_frames * s_len]);
    alpha[(0, 0)] = lp[(0, ext[0])];
    if s_len >= 2 {
        alpha[(0, 1)] = lp[(0, ext[1])];
    }
    for t in 1..t_frames {
        for s in 0..s_len {
            let stay = alpha[(t - 1, s)];
            let step = if s >= 1 {
                alpha[(t - 1, s - 1)]
            } else {
                f64::NEG_INFINITY
            };
            let skip = if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                alpha[(t - 1, s - 2)]
            } else {
                f64::NEG_INFINITY
            };
            alpha[(t, s)] = lp[(t, ext[s])] + logsumexp3(stay, step, skip);
        }
    }
    alpha
}

/// Enumeration bounds for the brute-force oracle.
pub const BRUTE_MAX_FRAMES: usize = 8;
pub const BRUTE_MAX_VOCAB: usize = 4;

/// Exhaustive oracle: enumerate all `(V+1)^T` frame paths, sum the softmax
/// probabilities of those whose blank-collapse equals `ids`, and return
/// `-log` of the sum. Independent of the lattice recursion above.
pub fn ctc_bruteforce(logits: &Mat, ids: &[usize]) -> Result<f64> {
    let t_frames = logits.rows();
    let classes = logits.cols();
    if classes < 2 {
        return Err(Error::arg("logits need at least 2 classes"));
    }
    let vocab = classes - 1;
    if t_frames > BRUTE_MAX_FRAMES || vocab > BRUTE_MAX_VOCAB {
        return Err(Error::EnumerationBound(format!(
            "brute force limited to T <= {BRUTE_MAX_FRAMES}, V <= {BRUTE_MAX_VOCAB}; got T={t_frames}, V={vocab}"
        )));
    }
    let probs = frame_posteriors(logits);
    let blank = vocab;
    let mut path = vec![0usize; t_frames];
    let mut total = 0.0f64;
    loop {
        // collapse: merge adjacent repeats, then drop blanks
        let mut collapsed: Vec<usize> = Vec::with_capacity(t_frames);
        let mut prev = usize::MAX;
        for &sym in &path {
            if sym != prev {
                if sym != blank {
                    collapsed.push(sym);
                }
                prev = sym;
            }
        }
        if collapsed == ids {
            let mut p = 1.0;
            for (t, &sym) in path.iter().enumerate() {
                p *= probs[(t, sym)];
            }
            total += p;
        }
        // odometer increment over paths
        let mut t = 0;
        loop {
            if t == t_frames {
                if total == 0.0 {
                    return Err(Error::CtcInfeasible {
                        needed: min_frames(ids),
                        got: t_frames,
                    });
                }
                return Ok(-total.ln());
            }
            path[t] += 1;
            if path[t] <= blank {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// Best-path decoding: per-frame argmax (ties to the lowest index),
/// collapse adjacent repeats, delete blanks.
pub fn greedy_decode(logits: &Mat) -> Vec<usize> {
    let blank = logits.cols() - 1;
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != prev && best != blank {
            out.push(best);
        }
        prev = best;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const LN_3: f64 = 1.0986122886681098;

    fn random_instance(
        rng: &mut impl Rng,
        t_max: usize,
        v_max: usize,
    ) -> Option<(Mat, Vec<usize>)> {
        let t = rng.gen_range(1..=t_max);
        let v = rng.gen_range(1..=v_max);
        let len = rng.gen_range(0..=t.min(4));
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v)).collect();
        if min_frames(&ids) > t {
            return None;
        }
        let data: Vec<f64> = (0..t * (v + 1)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Some((Mat::from_vec(t, v + 1, data), ids))
    }

    #[test]
    fn single_frame_uniform_loss_is_ln_3() {
        // V=2 -> 3 classes; uniform logits give P(a) = 1/3
        let logits = Mat::zeros(1, 3);
        let loss = ctc_loss(&logits, &[0]).unwrap();
        assert!((loss - LN_3).abs() <= 1e-12);
    }

    #[test]
    fn two_frames_zero_logits_loss_is_ln_3() {
        // paths aa, a-, -a: 3 * (1/3)^2 = 1/3
        let logits = Mat::zeros(2, 3);
        let loss = ctc_loss(&logits, &[0]).unwrap();
        assert!((loss - LN_3).abs() <= 1e-12);
        let brute = ctc_bruteforce(&logits, &[0]).unwrap();
        assert!((loss - brute).abs() <= 1e-12);
    }

    #[test]
    fn repeated_label_needs_three_frames() {
        let logits = Mat::zeros(1, 3);
        assert!(matches!(
            ctc_loss(&logits, &[0, 0]),
            Err(Error::CtcInfeasible { needed: 3, got: 1 })
        ));
        let logits2 = Mat::zeros(2, 3);
        assert!(ctc_loss(&logits2, &[0, 0]).is_err());
        let logits3 = Mat::zeros(3, 3);
        assert!(ctc_loss(&logits3, &[0, 0]).is_ok());
    }

    #[test]
    fn brute_force_signals_infeasible_and_bounds() {
        let logits = Mat::zeros(1, 3);
        assert!(matches!(
            ctc_bruteforce(&logits, &[0, 0]),
            Err(Error::CtcInfeasible { .. })
        ));
        let big = Mat::zeros(9, 3);
        assert!(matches!(
            ctc_bruteforce(&big, &[0]),
            Err(Error::EnumerationBound(..))
        ));
        let wide = Mat::zeros(4, 6);
        assert!(matches!(
            ctc_bruteforce(&wide, &[0]),
            Err(Error::EnumerationBound(..))
        ));
    }

    #[test]
    fn forward_matches_bruteforce_on_random_instances() {
        let mut rng = crate::rng::stream_rng(31, &[1]);
        let mut checked = 0;
        while checked < 200 {
            let Some((logits, ids)) = random_instance(&mut rng, 8, 4) else {
                continue;
            };
            let fast = ctc_loss(&logits, &ids).unwrap();
            let slow = ctc_bruteforce(&logits, &ids).unwrap();
            let rel = (fast - slow).abs() / slow.abs().max(1e-30);
            assert!(rel <= 1e-9, "loss {fast} vs oracle {slow}");
            checked += 1;
        }
    }

    #[test]
    fn confident_single_path_loss_tends_to_zero() {
        // strongly favor the path [a, blank, a]
        let mut logits = Mat::zeros(3, 3);
        logits[(0, 0)] = 50.0;
        logits[(1, 2)] = 50.0;
        logits[(2, 0)] = 50.0;
        let loss = ctc_loss(&logits, &[0, 0]).unwrap();
        assert!(loss >= 0.0 && loss <= 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(31, &[2]);
        let mut checked = 0;
        while checked < 100 {
            let Some((logits, ids)) = random_instance(&mut rng, 6, 3) else {
                continue;
            };
            let (_, grad) = ctc_forward(&logits, &ids).unwrap();
            let h = 1e-5;
            for _ in 0..4 {
                let t = rng.gen_range(0..logits.rows());
                let k = rng.gen_range(0..logits.cols());
                let mut plus = logits.clone();
                plus[(t, k)] += h;
                let mut minus = logits.clone();
                minus[(t, k)] -= h;
                let fd =
                    (ctc_loss(&plus, &ids).unwrap() - ctc_loss(&minus, &ids).unwrap()) / (2.0 * h);
                let denom = grad[(t, k)].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (grad[(t, k)] - fd).abs() / denom <= 1e-4,
                    "grad {} vs fd {fd}",
                    grad[(t, k)]
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn appending_blank_frame_bounded_loss_increase() {
        let mut rng = crate::rng::stream_rng(31, &[3]);
        for _ in 0..50 {
            let Some((logits, ids)) = random_instance(&mut rng, 6, 3) else {
                continue;
            };
            let base = ctc_loss(&logits, &ids).unwrap();
            // append a frame favoring blank
            let blank = logits.cols() - 1;
            let mut extended = Mat::zeros(logits.rows() + 1, logits.cols());
            extended.data_mut()[..logits.data().len()].copy_from_slice(logits.data());
            extended[(logits.rows(), blank)] = 3.0;
            let grown = ctc_loss(&extended, &ids).unwrap();
            let blank_neg_logp = -log_softmax_rows(&extended)[(logits.rows(), blank)];
            assert!(grown <= base + blank_neg_logp + 1e-12);
        }
    }

    #[test]
    fn greedy_decode_rules() {
        // all blank -> empty
        let mut logits = Mat::zeros(3, 3);
        logits[(0, 2)] = 1.0;
        logits[(1, 2)] = 1.0;
        logits[(2, 2)] = 1.0;
        assert!(greedy_decode(&logits).is_empty());

        // argmax path [a, a, blank, a] -> [a, a]
        let mut m = Mat::zeros(4, 3);
        m[(0, 0)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(2, 2)] = 1.0;
        m[(3, 0)] = 1.0;
        assert_eq!(greedy_decode(&m), vec![0, 0]);

        // [blank, b, b, b, blank] -> [b]
        let mut m = Mat::zeros(5, 3);
        m[(0, 2)] = 1.0;
        m[(1, 1)] = 1.0;
        m[(2, 1)] = 1.0;
        m[(3, 1)] = 1.0;
        m[(4, 2)] = 1.0;
        assert_eq!(greedy_decode(&m), vec![1]);

        // ties resolve to the lowest index: all-zero row picks class 0
        let m = Mat::zeros(1, 3);
        assert_eq!(greedy_decode(&m), vec![0]);
    }

    #[test]
    fn frame_posteriors_contract() {
        // all-zero row -> uniform
        let p = frame_posteriors(&Mat::zeros(1, 4));
        for &v in p.row(0) {
            assert!((v - 0.25).abs() <= 1e-15);
        }
        // saturated row
        let mut m = Mat::zeros(1, 3);
        m[(0, 0)] = 100.0;
        let p = frame_posteriors(&m);
        assert!(p[(0, 0)] >= 1.0 - 1e-12);
        // shift invariance
        let mut rng = crate::rng::stream_rng(31, &[4]);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = Mat::from_vec(3, 4, data.clone());
        let b = Mat::from_vec(3, 4, data.iter().map(|x| x + 7.5).collect());
        let (pa, pb) = (frame_posteriors(&a), frame_posteriors(&b));
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        // rows sum to one
        for t in 0..pa.rows() {
            let s: f64 = pa.row(t).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
