use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph};
use crate::corpus::{make_minibatches, SentencePair, Vocabulary};
use crate::model::Model;
use crate::{Error, Result};

use super::log::{LogRecord, TrainLog};
use super::optim::{adam_update, clip_gradients, AdamState};
use super::TrainConfig;

pub(crate) fn with_end(target: &[u32]) -> Vec<u32> {
    let mut t = Vec::with_capacity(target.len() + 1);
    t.extend_from_slice(target);
    t.push(Vocabulary::END_ID);
    t
}

/// Summed negative log-likelihood of the batch (each target gets `<s>`
/// appended) and its gradient with respect to every parameter.
pub fn nll_loss(model: &Model, batch: &[&SentencePair]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(&model.params.store);
    let mut loss = 0.0;
    for pair in batch {
        let mut g = Graph::new(&model.params.store);
        let lp = model.logprob_graph(&mut g, &pair.source, &[with_end(&pair.target)])?[0];
        let neg = g.scale(lp, -1.0);
        loss += g.scalar(neg);
        g.backward(neg, &mut grads);
    }
    Ok((loss, grads))
}

/// Mean negative log-likelihood per target token (including `<s>`).
pub fn dev_nll_per_token(model: &Model, pairs: &[SentencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    let mut tokens = 0;
    for pair in pairs {
        let mut g = Graph::new(&model.params.store);
        let lp = model.logprob_graph(&mut g, &pair.source, &[with_end(&pair.target)])?[0];
        total -= g.scalar(lp);
        tokens += pair.target.len() + 1;
    }
    Ok(total / tokens as f64)
}

/// Outcome of one development-set check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleEvent {
    /// New best; the caller should keep the current model.
    Improved,
    NoImprovement,
    /// Patience ran out: reload the best model and continue at this rate.
    Halve(f64),
    /// Patience ran out at the last rate.
    Stop,
}

/// Dev-likelihood driven learning-rate schedule: after `patience`
/// sentences without improvement, move to the next (halved) rate; after
/// the last rate converges, stop.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    rates: Vec<f64>,
    stage: usize,
    best: f64,
    last_improvement: u64,
    patience: u64,
}

impl LrSchedule {
    pub fn new(rates: Vec<f64>, patience: u64) -> Self {
        assert!(!rates.is_empty());
        Self {
            rates,
            stage: 0,
            best: f64::INFINITY,
            last_improvement: 0,
            patience,
        }
    }

    pub fn lr(&self) -> f64 {
        self.rates[self.stage]
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, sentences_seen: u64, dev_loss: f64) -> ScheduleEvent {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.last_improvement = sentences_seen;
            return ScheduleEvent::Improved;
        }
        if sentences_seen.saturating_sub(self.last_improvement) < self.patience {
            return ScheduleEvent::NoImprovement;
        }
        if self.stage + 1 < self.rates.len() {
            self.stage += 1;
            self.last_improvement = sentences_seen;
            ScheduleEvent::Halve(self.lr())
        } else {
            ScheduleEvent::Stop
        }
    }
}

/// Result of maximum-likelihood training.
#[derive(Debug, Clone)]
pub struct MlOutcome {
    /// The model with the best development score seen.
    pub model: Model,
    pub best_dev_loss: f64,
    pub final_lr: f64,
    pub halvings: usize,
    pub epochs: usize,
    pub sentences_seen: u64,
}

/// Maximum-likelihood training selected on development per-token NLL.
pub fn train_ml(
    model: Model,
    train: &[SentencePair],
    dev: &[SentencePair],
    config: &TrainConfig,
    log: &mut TrainLog,
) -> Result<MlOutcome> {
    if dev.is_empty() {
        return Err(Error::InvalidArgument("empty development set".into()));
    }
    train_ml_with_evaluator(
        model,
        train,
        config,
        log,
        |m| dev_nll_per_token(m, dev),
        |_| Ok(()),
    )
}

/// [`train_ml`] with a custom development scorer (lower is better) and a
/// hook called whenever a new best model is found.
pub fn train_ml_with_evaluator(
    model: Model,
    train: &[SentencePair],
    config: &TrainConfig,
    log: &mut TrainLog,
    mut evaluate: impl FnMut(&Model) -> Result<f64>,
    mut on_best: impl FnMut(&Model) -> Result<()>,
) -> Result<MlOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let batches = make_minibatches(train, config.word_budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut schedule = LrSchedule::new(config.lr_schedule(), config.patience);

    let mut current = model;
    let initial = evaluate(&current)?;
    schedule.observe(0, initial);
    let mut best = current.clone();
    on_best(&best)?;
    log.push(LogRecord {
        sentences_seen: 0,
        lr: schedule.lr(),
        train_loss: None,
        dev_loss: Some(initial),
        expected_error: None,
        wall_time: None,
    })?;

    let mut adam = AdamState::new(&current.params.store);
    let mut seen: u64 = 0;
    let mut last_check: u64 = 0;
    let mut next_check = config.dev_check_interval;
    let (mut acc_loss, mut acc_tokens) = (0.0, 0usize);
    let mut batch_index = 0usize;
    let mut halvings = 0;
    let mut epochs = 0;

    let mut check = |schedule: &mut LrSchedule,
                     halvings: &mut usize,
                     current: &mut Model,
                     best: &mut Model,
                     adam: &mut AdamState,
                     seen: u64,
                     train_loss: Option<f64>,
                     log: &mut TrainLog|
     -> Result<bool> {
        let lr_before = schedule.lr();
        let dev = evaluate(current)?;
        let event = schedule.observe(seen, dev);
        log.push(LogRecord {
            sentences_seen: seen,
            lr: lr_before,
            train_loss,
            dev_loss: Some(dev),
            expected_error: None,
            wall_time: None,
        })?;
        match event {
            ScheduleEvent::Improved => {
                *best = current.clone();
                on_best(best)?;
            }
            ScheduleEvent::NoImprovement => {}
            ScheduleEvent::Halve(lr) => {
                log::info!("no dev improvement; restarting from best model at lr {lr}");
                *current = best.clone();
                *adam = AdamState::new(&current.params.store);
                *halvings += 1;
            }
            ScheduleEvent::Stop => return Ok(true),
        }
        Ok(false)
    };

    'outer: loop {
        if config.max_epochs.is_some_and(|m| epochs >= m) {
            break;
        }
        epochs += 1;
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut rng);
        for &b in &order {
            let batch: Vec<&SentencePair> = batches[b].iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = nll_loss(&current, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_index });
            }
            clip_gradients(&mut grads, config.clip_norm).map_err(|e| match e {
                Error::NonFiniteGradient => Error::NonFiniteLoss { batch: batch_index },
                other => other,
            })?;
            adam_update(&mut current.params.store, &grads, &mut adam, schedule.lr())?;
            batch_index += 1;
            seen += batch.len() as u64;
            acc_loss += loss;
            acc_tokens += batch.iter().map(|p| p.target.len() + 1).sum::<usize>();

            if seen >= next_check {
                while next_check <= seen {
                    next_check += config.dev_check_interval;
                }
                let train_loss = Some(acc_loss / acc_tokens as f64);
                (acc_loss, acc_tokens) = (0.0, 0);
                last_check = seen;
                if check(
                    &mut schedule,
                    &mut halvings,
                    &mut current,
                    &mut best,
                    &mut adam,
                    seen,
                    train_loss,
                    log,
                )? {
                    break 'outer;
                }
            }
        }
    }
    if last_check != seen {
        let train_loss = (acc_tokens > 0).then(|| acc_loss / acc_tokens as f64);
        check(
            &mut schedule,
            &mut halvings,
            &mut current,
            &mut best,
            &mut adam,
            seen,
            train_loss,
            log,
        )?;
    }
    Ok(MlOutcome {
        model: best,
        best_dev_loss: schedule.best(),
        final_lr: schedule.lr(),
        halvings,
        epochs,
        sentences_seen: seen,
    })
}
