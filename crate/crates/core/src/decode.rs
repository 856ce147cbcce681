//! Beam search with a word penalty and probability-averaged ensembles.

use std::cmp::Ordering;

use crate::autodiff::log_softmax;
use crate::corpus::Vocabulary;
use crate::model::{DecoderState, Model, PreparedSource};
use crate::{Error, Result};

/// A (partial or complete) translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub logprob: f64,
    /// One decoder state per model, taken before the last token was fed.
    pub states: Vec<DecoderState>,
    /// The last token is `<s>`.
    pub complete: bool,
}

impl Hypothesis {
    /// Tokens without the trailing `<s>`.
    pub fn words(&self) -> &[u32] {
        if self.complete {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// `log P + lambda * |tokens|`, the log of `P * exp(lambda |E'|)`.
/// `|tokens|` counts the final `<s>`.
pub fn score_hypothesis(h: &Hypothesis, word_penalty: f64) -> f64 {
    h.logprob + word_penalty * h.tokens.len() as f64
}

/// Elementwise mean of per-model distributions.
pub fn ensemble_distribution(distributions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = distributions
        .first()
        .ok_or_else(|| Error::InvalidArgument("no distributions to average".into()))?;
    if distributions.iter().any(|d| d.len() != first.len()) {
        return Err(Error::DimensionMismatch(
            "ensemble members disagree on vocabulary size".into(),
        ));
    }
    let k = distributions.len() as f64;
    Ok((0..first.len())
        .map(|i| distributions.iter().map(|d| d[i]).sum::<f64>() / k)
        .collect())
}

/// When to stop expanding the beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Termination {
    /// Stop once the best live hypothesis, extended by `max(lambda, 0)` for
    /// each token it may still add, cannot beat the best completed one.
    /// Identical to [`Termination::Literal`] when `lambda <= 0`.
    #[default]
    Bounded,
    /// Stop once the best live hypothesis's current score is no higher than
    /// the best completed one. Can stop too early when `lambda > 0`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub word_penalty: f64,
    /// Maximum number of output tokens including `<s>`. `None` means
    /// `2 |F| + 10`.
    pub max_len: Option<usize>,
    pub termination: Termination,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            word_penalty: 0.0,
            max_len: None,
            termination: Termination::Bounded,
        }
    }
}

impl BeamConfig {
    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 10)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub hypothesis: Hypothesis,
    /// False when nothing completed within the length limit and the best
    /// partial hypothesis was returned instead.
    pub finished: bool,
    pub score: f64,
}

/// Orders by score (higher first), then length (shorter first), then tokens.
fn better(a_score: f64, a: &[u32], b_score: f64, b: &[u32]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

struct Expansion {
    logprobs: Vec<f64>,
    states: Vec<DecoderState>,
}

fn expand(models: &[&Model], prepared: &[PreparedSource], hyp: &Hypothesis) -> Result<Expansion> {
    let prev = hyp.tokens.last().copied().unwrap_or(Vocabulary::END_ID);
    if models.len() == 1 {
        let (state, logits, _) = models[0].step_logits(&prepared[0], &hyp.states[0], prev)?;
        return Ok(Expansion {
            logprobs: log_softmax(&logits),
            states: vec![state],
        });
    }
    let mut dists = Vec::with_capacity(models.len());
    let mut states = Vec::with_capacity(models.len());
    for ((m, p), s) in models.iter().zip(prepared).zip(&hyp.states) {
        let (state, probs) = m.step(p, s, prev)?;
        dists.push(probs);
        states.push(state);
    }
    let mean = ensemble_distribution(&dists)?;
    Ok(Expansion {
        logprobs: mean.iter().map(|p| p.ln()).collect(),
        states,
    })
}

/// Beam search over one model or an ensemble.
///
/// Each step extends every live hypothesis by every word and keeps the
/// `beam_size` best extensions. Extensions ending in `<s>` take a beam slot
/// and are set aside as completed. Search stops when the best live
/// hypothesis can no longer beat the best completed one (see
/// [`Termination`]), when nothing is left alive, or at the length limit.
pub fn beam_search(models: &[&Model], source: &[u32], config: &BeamConfig) -> Result<SearchResult> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models given".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptySentence);
    }
    if config.beam_size == 0 {
        return Err(Error::InvalidArgument(
            "beam size must be at least 1".into(),
        ));
    }
    let max_len = config.max_len_for(source.len());
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let vocab = models[0].tgt_vocab_size();
    if models.iter().any(|m| m.tgt_vocab_size() != vocab) {
        return Err(Error::DimensionMismatch(
            "ensemble members disagree on target vocabulary".into(),
        ));
    }
    let lambda = config.word_penalty;
    let prepared: Vec<PreparedSource> = models
        .iter()
        .map(|m| m.prepare(source))
        .collect::<Result<_>>()?;
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        states: models
            .iter()
            .zip(&prepared)
            .map(|(m, p)| m.initial_state(p))
            .collect(),
        complete: false,
    }];
    let mut best: Option<(f64, Hypothesis)> = None;

    for len in 1..=max_len {
        let expansions: Vec<Expansion> = beam
            .iter()
            .map(|h| expand(models, &prepared, h))
            .collect::<Result<_>>()?;
        // (score, parent, word); all candidates share the same length
        let mut candidates: Vec<(f64, usize, u32)> = Vec::with_capacity(beam.len() * vocab);
        for (k, (h, e)) in beam.iter().zip(&expansions).enumerate() {
            for (w, lp) in e.logprobs.iter().enumerate() {
                if *lp == f64::NEG_INFINITY {
                    continue;
                }
                candidates.push((h.logprob + lp + lambda * len as f64, k, w as u32));
            }
        }
        let cmp = |a: &(f64, usize, u32), b: &(f64, usize, u32)| {
            b.0.total_cmp(&a.0)
                .then_with(|| beam[a.1].tokens.cmp(&beam[b.1].tokens))
                .then(a.2.cmp(&b.2))
        };
        candidates.sort_by(cmp);
        if len == max_len {
            // extensions that do not end here can never finish, so they get
            // no beam slots; the best one is kept only as a fallback
            let fallback = candidates
                .iter()
                .find(|c| c.2 != Vocabulary::END_ID)
                .copied();
            candidates.retain(|c| c.2 == Vocabulary::END_ID);
            candidates.truncate(config.beam_size);
            candidates.extend(fallback);
        } else {
            candidates.truncate(config.beam_size);
        }

        let mut next = Vec::with_capacity(candidates.len());
        for &(score, k, w) in &candidates {
            let parent = &beam[k];
            let mut tokens = parent.tokens.clone();
            tokens.push(w);
            let h = Hypothesis {
                logprob: parent.logprob + expansions[k].logprobs[w as usize],
                tokens,
                states: expansions[k].states.clone(),
                complete: w == Vocabulary::END_ID,
            };
            if h.complete {
                let replace = match &best {
                    None => true,
                    Some((s, b)) => better(score, &h.tokens, *s, &b.tokens) == Ordering::Less,
                };
                if replace {
                    best = Some((score, h));
                }
            } else {
                next.push(h);
            }
        }
        beam = next;
        let Some(top) = beam.first() else { break };
        if let Some((best_score, _)) = &best {
            let headroom = match config.termination {
                Termination::Bounded => lambda.max(0.0) * (max_len - len) as f64,
                Termination::Literal => 0.0,
            };
            if score_hypothesis(top, lambda) + headroom <= *best_score {
                break;
            }
        }
    }

    match best {
        Some((score, hypothesis)) => Ok(SearchResult {
            hypothesis,
            finished: true,
            score,
        }),
        None => {
            let hypothesis = beam
                .into_iter()
                .next()
                .ok_or_else(|| Error::InvalidArgument("search produced no hypotheses".into()))?;
            log::warn!("no hypothesis reached <s> within {max_len} tokens; returning best partial");
            Ok(SearchResult {
                score: score_hypothesis(&hypothesis, lambda),
                hypothesis,
                finished: false,
            })
        }
    }
}
