//! Translation metrics: corpus BLEU, sentence-level BLEU+1, the MRT error
//! `1 - BLEU+1`, and output/reference length ratio.

use std::collections::HashMap;
use std::hash::Hash;

use crate::{Error, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram totals for orders 1..=4.
fn match_stats<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> [(usize, usize); MAX_ORDER] {
    let mut out = [(0, 0); MAX_ORDER];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        let matched = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        *slot = (matched, hyp.len().saturating_sub(n - 1));
    }
    out
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus BLEU-4 on a 0-100 scale, single reference, no smoothing.
pub fn bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::InvalidArgument("no references".into()));
    }
    let mut totals = [(0usize, 0usize); MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        for (t, s) in totals.iter_mut().zip(match_stats(h, r)) {
            t.0 += s.0;
            t.1 += s.1;
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    if hyp_len == 0 || totals.iter().any(|&(m, _)| m == 0) {
        return Ok(0.0);
    }
    let log_precision: f64 = totals
        .iter()
        .map(|&(m, c)| (m as f64 / c as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    Ok(100.0 * brevity_penalty(hyp_len, ref_len) * log_precision.exp())
}

/// Sentence BLEU+1 in `[0, 1]`: unigram precision is unsmoothed, orders
/// 2-4 use `(matches + 1) / (count + 1)`.
pub fn sbleu<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> f64 {
    if hypothesis.is_empty() {
        return 0.0;
    }
    let stats = match_stats(hypothesis, reference);
    if stats[0].0 == 0 {
        return 0.0;
    }
    let log_precision: f64 = stats
        .iter()
        .enumerate()
        .map(|(i, &(m, c))| {
            if i == 0 {
                (m as f64 / c as f64).ln()
            } else {
                ((m + 1) as f64 / (c + 1) as f64).ln()
            }
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    brevity_penalty(hypothesis.len(), reference.len()) * log_precision.exp()
}

/// `1 - sbleu(hypothesis, reference)`.
pub fn mrt_error<T: Eq + Hash>(reference: &[T], hypothesis: &[T]) -> f64 {
    1.0 - sbleu(hypothesis, reference)
}

/// `100 * total hypothesis tokens / total reference tokens`.
pub fn length_ratio<T>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let hyp: usize = hypotheses.iter().map(Vec::len).sum();
    let reference: usize = references.iter().map(Vec::len).sum();
    if reference == 0 {
        return Err(Error::InvalidArgument("references are empty".into()));
    }
    Ok(100.0 * hyp as f64 / reference as f64)
}
