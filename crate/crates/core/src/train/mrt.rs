use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax, Gradients, Graph, Var};
use crate::corpus::{SentencePair, Vocabulary};
use crate::eval::{mrt_error, sbleu};
use crate::model::Model;
use crate::{Error, Result};

use super::log::{LogRecord, TrainLog};
use super::optim::{adam_update, clip_gradients, AdamState};
use super::TrainConfig;

/// Ancestral sample from `p(e_i | F, e_<i)`. The result ends with `<s>`
/// unless `max_len` was reached first.
pub fn sample_translation<R: Rng + ?Sized>(
    model: &Model,
    source: &[u32],
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let prepared = model.prepare(source)?;
    let mut state = model.initial_state(&prepared);
    let mut prev = Vocabulary::END_ID;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (next, probs) = model.step(&prepared, &state, prev)?;
        let word = draw(&probs, rng) as u32;
        out.push(word);
        if word == Vocabulary::END_ID {
            break;
        }
        state = next;
        prev = word;
    }
    Ok(out)
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `P^alpha / sum P^alpha` computed from log-probabilities.
pub fn mrt_weights(logprobs: &[f64], alpha: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logprobs.iter().map(|lp| alpha * lp).collect();
    softmax(&scaled)
}

fn strip_end(sample: &[u32]) -> &[u32] {
    match sample.split_last() {
        Some((&Vocabulary::END_ID, rest)) => rest,
        _ => sample,
    }
}

/// Loss value, its gradient and the (deduplicated) sample set it used.
#[derive(Debug, Clone)]
pub struct MrtLoss {
    pub loss: f64,
    pub grads: Gradients,
    pub samples: Vec<Vec<u32>>,
    pub errors: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Expected `1 - BLEU+1` over a fixed sample set, with weights
/// `P(E'|F)^alpha` renormalized over the set. The gradient flows through
/// both the numerator and the normalizer.
pub fn mrt_loss_with_samples(
    model: &Model,
    source: &[u32],
    reference: &[u32],
    samples: Vec<Vec<u32>>,
    alpha: f64,
) -> Result<MrtLoss> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if samples.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("all samples are empty".into()));
    }
    let samples: Vec<Vec<u32>> = samples.into_iter().filter(|s| !s.is_empty()).collect();
    let errors: Vec<f64> = samples
        .iter()
        .map(|s| mrt_error(reference, strip_end(s)))
        .collect();

    let mut g = Graph::new(&model.params.store);
    let logprobs = model.logprob_graph(&mut g, source, &samples)?;
    let scaled: Vec<Var> = logprobs.iter().map(|&lp| g.scale(lp, alpha)).collect();
    let stacked = g.concat(&scaled);
    let weights = g.softmax(stacked);
    let loss = g.const_dot(weights, errors.clone());
    let mut grads = Gradients::zeros_like(&model.params.store);
    g.backward(loss, &mut grads);
    Ok(MrtLoss {
        loss: g.scalar(loss),
        weights: g.value(weights).to_vec(),
        grads,
        samples,
        errors,
    })
}

/// Draws `num_samples` translations, removes duplicates (keeping first
/// occurrence order) and evaluates [`mrt_loss_with_samples`].
pub fn mrt_loss<R: Rng + ?Sized>(
    model: &Model,
    pair: &SentencePair,
    num_samples: usize,
    alpha: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<MrtLoss> {
    if num_samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let mut samples: Vec<Vec<u32>> = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let s = sample_translation(model, &pair.source, max_len, rng)?;
        if !samples.contains(&s) {
            samples.push(s);
        }
    }
    mrt_loss_with_samples(model, &pair.source, &pair.target, samples, alpha)
}

/// `1 - mean BLEU+1` of `num_samples` plain (not deduplicated) samples per
/// sentence, averaged over `pairs`.
pub fn expected_sampled_error<R: Rng + ?Sized>(
    model: &Model,
    pairs: &[SentencePair],
    num_samples: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<f64> {
    if pairs.is_empty() || num_samples == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for pair in pairs {
        for _ in 0..num_samples {
            let s = sample_translation(model, &pair.source, max_len, rng)?;
            total += sbleu(strip_end(&s), &pair.target);
        }
    }
    Ok(1.0 - total / (pairs.len() * num_samples) as f64)
}

/// Result of minimum-risk fine-tuning.
#[derive(Debug, Clone)]
pub struct MrtOutcome {
    /// The model with the lowest development expected error.
    pub model: Model,
    pub best_dev_error: f64,
    pub initial_dev_error: f64,
    pub epochs: usize,
}

/// Per-sentence minimum-risk updates with clipping and ADAM, starting from
/// an already trained model. Model selection uses the development expected
/// sampled error, evaluated with a fixed seed so checks are comparable.
pub fn train_mrt(
    model: Model,
    train: &[SentencePair],
    dev: &[SentencePair],
    config: &TrainConfig,
    log: &mut TrainLog,
) -> Result<MrtOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mrt = &config.mrt;
    let dev_seed = config.seed ^ 0x5eed_d3f0;
    let evaluate = |m: &Model| {
        let mut rng = ChaCha8Rng::seed_from_u64(dev_seed);
        expected_sampled_error(m, dev, mrt.num_samples, mrt.max_sample_len, &mut rng)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = model;
    let initial = evaluate(&current)?;
    let mut best = current.clone();
    let mut best_error = initial;
    log.push(LogRecord {
        sentences_seen: 0,
        lr: mrt.lr,
        train_loss: None,
        dev_loss: None,
        expected_error: Some(initial),
        wall_time: None,
    })?;

    let mut adam = AdamState::new(&current.params.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut seen = 0u64;
    for _ in 0..mrt.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let mut out = mrt_loss(
                &current,
                &train[i],
                mrt.num_samples,
                mrt.alpha,
                mrt.max_sample_len,
                &mut rng,
            )?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: seen as usize,
                });
            }
            clip_gradients(&mut out.grads, config.clip_norm).map_err(|e| match e {
                Error::NonFiniteGradient => Error::NonFiniteLoss {
                    batch: seen as usize,
                },
                other => other,
            })?;
            adam_update(&mut current.params.store, &out.grads, &mut adam, mrt.lr)?;
            epoch_loss += out.loss;
            seen += 1;
        }
        let dev_error = evaluate(&current)?;
        log.push(LogRecord {
            sentences_seen: seen,
            lr: mrt.lr,
            train_loss: Some(epoch_loss / train.len() as f64),
            dev_loss: None,
            expected_error: Some(dev_error),
            wall_time: None,
        })?;
        if dev_error < best_error {
            best_error = dev_error;
            best = current.clone();
        }
    }
    Ok(MrtOutcome {
        model: best,
        best_dev_error: best_error,
        initial_dev_error: initial,
        epochs: mrt.epochs,
    })
}
