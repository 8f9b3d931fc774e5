//! Specialization training loop for MLM and the two uncertainty-weighted
//! multi-task variants.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use super::early_stop::{fit, EarlyStopping, Objective};
use super::losses::{joint_loss, mlm_loss, socio_loss, UncertaintyWeights};
use crate::corpus::{dynamic_mask, MaskedBatch, MaskingConfig, Review, DEFAULT_MASK_RATE, NUM_GROUPS};
use crate::encoder::{cls_representation, ctx_masked_mean, EncoderModel, Mode, SOCIO_HEAD};
use crate::error::{Error, Result};
use crate::nn::{Binder, Graph, Tensor};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mlm")]
    Mlm,
    #[serde(rename = "mtl-cls")]
    MtlCls,
    #[serde(rename = "mtl-ctx")]
    MtlCtx,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mlm, Method::MtlCls, Method::MtlCtx];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mlm => "mlm",
            Method::MtlCls => "mtl-cls",
            Method::MtlCtx => "mtl-ctx",
        }
    }

    /// Display name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::Mlm => "MLM",
            Method::MtlCls => "MTL-W (CLS)",
            Method::MtlCtx => "MTL-W (CTX)",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn is_multitask(self) -> bool {
        self != Method::Mlm
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Mlm,
            epochs: 30,
            batch_size: 32,
            learning_rate: 5e-5,
            patience: 3,
            clip_norm: 1.0,
            mask_rate: DEFAULT_MASK_RATE,
            seed: 0,
        }
    }
}

/// Learning rates searched for specialization.
pub const SPECIALIZATION_LRS: [f64; 3] = [5e-5, 1e-5, 1e-6];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be non-negative", self.clip_norm)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return Err(Error::Config(format!("mask_rate {} outside (0, 1]", self.mask_rate)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_mlm")]
    pub l_mlm: f64,
    #[serde(rename = "L_socio")]
    pub l_socio: Option<f64>,
    pub eta_mlm: Option<f64>,
    pub eta_socio: Option<f64>,
    pub dev_metric: f64,
    pub dev_socio_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub l_mlm: f64,
    pub l_socio: Option<f64>,
    pub eta_mlm: f64,
    pub eta_socio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    pub stopper: EarlyStopping,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepRecord>,
    pub stopped_early: bool,
}

impl TrainState {
    /// The per-epoch log as JSON lines.
    pub fn log_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub struct Specialized {
    /// Parameters from the best dev epoch.
    pub model: EncoderModel,
    pub weights: UncertaintyWeights,
    /// Parameters after the final epoch.
    pub last: EncoderModel,
    pub state: TrainState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DevEval {
    pub l_mlm: f64,
    pub l_socio: Option<f64>,
    pub joint: Option<f64>,
    pub socio_accuracy: Option<f64>,
}

impl DevEval {
    /// Selection metric: MLM loss, or the joint loss for multi-task methods.
    pub fn metric(&self) -> f64 {
        self.joint.unwrap_or(self.l_mlm)
    }
}

struct Forward {
    graph: Graph,
    binder: Binder,
    loss: Tensor,
    l_mlm: f64,
    l_socio: Option<f64>,
    socio_correct: usize,
}

fn forward(
    model: &EncoderModel,
    weights: &UncertaintyWeights,
    method: Method,
    mb: &MaskedBatch,
    mode: Mode<'_>,
) -> Result<Forward> {
    let mut g = Graph::new();
    let mut b = Binder::new();
    let out = model.encode(&mut g, &mut b, &mb.batch, mode)?;
    let logits = model.mlm_logits(&mut g, &mut b, out.hidden, &mb.masked_positions)?;
    let l_mlm = mlm_loss(&mut g, logits, &mb.masked_targets)?;
    let l_mlm_value = g.scalar(l_mlm);
    if !method.is_multitask() {
        return Ok(Forward {
            graph: g,
            binder: b,
            loss: l_mlm,
            l_mlm: l_mlm_value,
            l_socio: None,
            socio_correct: 0,
        });
    }
    let pooled = match method {
        Method::MtlCls => cls_representation(&mut g, out.hidden)?,
        _ => ctx_masked_mean(&mut g, out.hidden, &mb.masked_positions)?,
    };
    let socio_logits = model.head_logits(&mut g, &mut b, pooled, SOCIO_HEAD)?;
    let socio_correct = argmax_rows(g.value(socio_logits), NUM_GROUPS)
        .zip(&mb.group_labels)
        .filter(|(p, y)| p == *y)
        .count();
    let l_socio = socio_loss(&mut g, socio_logits, &mb.group_labels)?;
    let l_socio_value = g.scalar(l_socio);
    let loss = joint_loss(&mut g, &mut b, l_mlm, l_socio, weights)?;
    Ok(Forward {
        graph: g,
        binder: b,
        loss,
        l_mlm: l_mlm_value,
        l_socio: Some(l_socio_value),
        socio_correct,
    })
}

pub(crate) fn argmax_rows(values: &[f64], width: usize) -> impl Iterator<Item = usize> + '_ {
    values.chunks(width).map(|row| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0
    })
}

fn masking(model: &EncoderModel, config: &TrainConfig) -> MaskingConfig {
    MaskingConfig {
        rate: config.mask_rate,
        max_len: model.config.max_len,
        vocab_size: model.config.vocab_size,
        ..MaskingConfig::default()
    }
}

/// Dev losses under fixed masks (keyed by `seed` and batch index) with
/// dropout off.
pub fn evaluate(
    model: &EncoderModel,
    weights: &UncertaintyWeights,
    dev: &[Review],
    config: &TrainConfig,
) -> Result<DevEval> {
    if dev.is_empty() {
        return Err(Error::EmptyBatch("dev set"));
    }
    let masking = masking(model, config);
    let mask_seed = seed::derive(config.seed, "dev_mask");
    let (mut l_mlm, mut l_socio, mut joint, mut correct) = (0.0, 0.0, 0.0, 0usize);
    for (i, chunk) in dev.chunks(config.batch_size).enumerate() {
        let refs: Vec<&Review> = chunk.iter().collect();
        let mb = dynamic_mask(&refs, &masking, mask_seed, i as u64)?;
        let f = forward(model, weights, config.method, &mb, Mode::Eval)?;
        let w = chunk.len() as f64;
        l_mlm += w * f.l_mlm;
        l_socio += w * f.l_socio.unwrap_or(0.0);
        joint += w * f.graph.scalar(f.loss);
        correct += f.socio_correct;
    }
    let n = dev.len() as f64;
    let mtl = config.method.is_multitask();
    Ok(DevEval {
        l_mlm: l_mlm / n,
        l_socio: mtl.then_some(l_socio / n),
        joint: mtl.then_some(joint / n),
        socio_accuracy: mtl.then_some(correct as f64 / n),
    })
}

/// Specializes `model` on `data`, early-stopping on the dev loss and
/// restoring the best-dev parameters. Multi-task methods add a two-way
/// socio head if the model lacks one.
pub fn train(mut model: EncoderModel, data: &[Review], dev: &[Review], config: &TrainConfig) -> Result<Specialized> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch("specialization data"));
    }
    if config.method.is_multitask() {
        model.ensure_head(SOCIO_HEAD, NUM_GROUPS)?;
    }
    let masking = masking(&model, config);
    let adam_config = AdamConfig::new(config.learning_rate);
    let mask_seed = seed::derive(config.seed, "train_mask");
    let mut dropout_rng = seed::rng(config.seed, "dropout");
    let mut adam = AdamState::new();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut state = (model, UncertaintyWeights::default());
    let outcome = fit(&mut state, config.epochs, config.patience, Objective::Minimize, |(model, weights), epoch| {
        order.sort_unstable();
        order.shuffle(&mut seed::rng_indexed(config.seed, "shuffle", epoch as u64));
        let (mut sum_mlm, mut sum_socio, mut n) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Review> = chunk.iter().map(|&i| &data[i]).collect();
            let mb = dynamic_mask(&refs, &masking, mask_seed, adam.step)?;
            let mut f = forward(model, weights, config.method, &mb, Mode::Train(&mut dropout_rng))?;
            f.graph.backward(f.loss)?;
            let mut grads = f.binder.grads(&f.graph);
            if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm);
            }
            adam_step(&mut [&mut model.params, weights.params_mut()], &grads, &mut adam, &adam_config)?;
            if !weights.is_finite() {
                return Err(Error::Numeric("uncertainty weights became non-finite".into()));
            }
            steps.push(StepRecord {
                l_mlm: f.l_mlm,
                l_socio: f.l_socio,
                eta_mlm: weights.eta_mlm(),
                eta_socio: weights.eta_socio(),
            });
            let w = chunk.len() as f64;
            sum_mlm += w * f.l_mlm;
            sum_socio += w * f.l_socio.unwrap_or(0.0);
            n += w;
        }
        let eval = evaluate(model, weights, dev, config)?;
        let mtl = config.method.is_multitask();
        let entry = EpochLog {
            epoch,
            l_mlm: sum_mlm / n,
            l_socio: mtl.then_some(sum_socio / n),
            eta_mlm: mtl.then_some(weights.eta_mlm()),
            eta_socio: mtl.then_some(weights.eta_socio()),
            dev_metric: eval.metric(),
            dev_socio_accuracy: eval.socio_accuracy,
        };
        log::info!("{}", serde_json::to_string(&entry)?);
        epochs.push(entry);
        Ok(eval.metric())
    })?;
    let (model, weights) = state;
    Ok(Specialized {
        model,
        weights,
        last: outcome.last.0,
        state: TrainState {
            adam,
            stopper: outcome.stopper,
            epochs,
            steps,
            stopped_early: outcome.stopped_early,
        },
    })
}

/// Trains once per learning rate and keeps the run with the lowest best-dev
/// metric (earliest rate on ties).
pub fn train_search(
    model: &EncoderModel,
    data: &[Review],
    dev: &[Review],
    config: &TrainConfig,
    learning_rates: &[f64],
) -> Result<(Specialized, f64)> {
    if learning_rates.is_empty() {
        return Err(Error::Config("no specialization learning rates".into()));
    }
    let mut best: Option<(Specialized, f64, f64)> = None;
    for &lr in learning_rates {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..config.clone()
        };
        let run = train(model.clone(), data, dev, &cfg)?;
        let metric = match run.state.stopper.best {
            Some(m) => m,
            None => evaluate(&run.model, &run.weights, dev, &cfg)?.metric(),
        };
        if best.as_ref().is_none_or(|(_, _, m)| metric < *m) {
            best = Some((run, lr, metric));
        }
    }
    let (run, lr, _) = best.expect("non-empty learning rates");
    Ok((run, lr))
}
