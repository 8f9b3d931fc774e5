//! Task fine-tuning with a CLS-pooled classification head.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::macro_f1;
use super::task::TaskSpec;
use crate::corpus::{Batch, Review};
use crate::encoder::{cls_representation, EncoderModel, Mode};
use crate::error::{Error, Result};
use crate::nn::{Binder, Graph};
use crate::seed;
use crate::specialize::{adam_step, argmax_rows, clip_global_norm, fit, AdamConfig, AdamState, Objective};

pub const TASK_HEAD: &str = "task";

/// Learning rates searched for fine-tuning.
pub const FINETUNE_LRS: [f64; 4] = [5e-5, 1e-5, 5e-6, 1e-6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rates: Vec<f64>,
    pub patience: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rates: FINETUNE_LRS.to_vec(),
            patience: 5,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be non-negative", self.clip_norm)));
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("invalid learning rates {:?}", self.learning_rates)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    /// Best-dev parameters of the selected learning rate.
    pub model: EncoderModel,
    pub learning_rate: f64,
    pub dev_f1: f64,
    /// Dev macro F1 per epoch for the selected learning rate.
    pub history: Vec<f64>,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    /// Parameters after the final epoch of the selected learning rate.
    pub last: EncoderModel,
}

fn check_labels(spec: &TaskSpec, reviews: &[Review]) -> Result<()> {
    if let Some(r) = reviews.iter().find(|r| spec.task.label(r) >= spec.n_classes()) {
        return Err(Error::Data(format!(
            "review {} has {} label {} outside 0..{}",
            r.id,
            spec.task,
            spec.task.label(r),
            spec.n_classes()
        )));
    }
    Ok(())
}

/// Argmax predictions of the task head, dropout off.
pub fn predict(model: &EncoderModel, reviews: &[Review], batch_size: usize) -> Result<Vec<usize>> {
    let n_classes = *model
        .heads()
        .get(TASK_HEAD)
        .ok_or_else(|| Error::Config(format!("model has no `{TASK_HEAD}` head")))?;
    let mut out = Vec::with_capacity(reviews.len());
    for chunk in reviews.chunks(batch_size.max(1)) {
        let batch = Batch::from_reviews(chunk, model.config.max_len)?;
        let mut g = Graph::new();
        let mut b = Binder::new();
        let enc = model.encode(&mut g, &mut b, &batch, Mode::Eval)?;
        let pooled = cls_representation(&mut g, enc.hidden)?;
        let logits = model.head_logits(&mut g, &mut b, pooled, TASK_HEAD)?;
        out.extend(argmax_rows(g.value(logits), n_classes));
    }
    Ok(out)
}

pub fn evaluate_f1(model: &EncoderModel, spec: &TaskSpec, reviews: &[Review], batch_size: usize) -> Result<f64> {
    check_labels(spec, reviews)?;
    let predictions = predict(model, reviews, batch_size)?;
    let gold: Vec<usize> = reviews.iter().map(|r| spec.task.label(r)).collect();
    macro_f1(&predictions, &gold, spec.n_classes())
}

/// Fine-tunes at one learning rate, early-stopping on dev macro F1.
pub fn finetune_at(
    mut model: EncoderModel,
    spec: &TaskSpec,
    train: &[Review],
    dev: &[Review],
    config: &FinetuneConfig,
    learning_rate: f64,
) -> Result<FinetuneOutcome> {
    spec.validate()?;
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyBatch("fine-tuning data"));
    }
    check_labels(spec, train)?;
    check_labels(spec, dev)?;
    model.drop_all_heads();
    model.ensure_head(TASK_HEAD, spec.n_classes())?;

    let adam_config = AdamConfig::new(learning_rate);
    let mut adam = AdamState::new();
    let mut dropout_rng = seed::rng(config.seed, "finetune/dropout");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let outcome = fit(&mut model, config.epochs, config.patience, Objective::Maximize, |model, epoch| {
        order.sort_unstable();
        order.shuffle(&mut seed::rng_indexed(config.seed, "finetune/shuffle", epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch::from_reviews(chunk.iter().map(|&i| &train[i]), model.config.max_len)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| spec.task.label(&train[i])).collect();
            let mut g = Graph::new();
            let mut b = Binder::new();
            let enc = model.encode(&mut g, &mut b, &batch, Mode::Train(&mut dropout_rng))?;
            let pooled = cls_representation(&mut g, enc.hidden)?;
            let logits = model.head_logits(&mut g, &mut b, pooled, TASK_HEAD)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            g.backward(loss)?;
            let mut grads = b.grads(&g);
            if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm);
            }
            adam_step(&mut [&mut model.params], &grads, &mut adam, &adam_config)?;
        }
        evaluate_f1(model, spec, dev, config.batch_size)
    })?;
    let dev_f1 = match outcome.stopper.best {
        Some(f) => f,
        None => evaluate_f1(&model, spec, dev, config.batch_size)?,
    };
    Ok(FinetuneOutcome {
        dev_f1,
        model,
        learning_rate,
        history: outcome.history,
        stopped_early: outcome.stopped_early,
        best_epoch: outcome.stopper.best_epoch,
        last: outcome.last,
    })
}

/// Fine-tunes at every configured learning rate and keeps the run with the
/// best dev macro F1 (earliest rate on ties).
pub fn finetune(
    model: &EncoderModel,
    spec: &TaskSpec,
    train: &[Review],
    dev: &[Review],
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let mut best: Option<FinetuneOutcome> = None;
    for &lr in &config.learning_rates {
        let run = finetune_at(model.clone(), spec, train, dev, config, lr)?;
        log::debug!("{} lr={lr} dev_f1={:.4}", spec.task, run.dev_f1);
        if best.as_ref().is_none_or(|b| run.dev_f1 > b.dev_f1 || b.dev_f1.is_nan()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one learning rate"))
}
