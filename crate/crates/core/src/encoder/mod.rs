//! Pre-norm transformer encoder with an MLM head and named classification
//! heads, built on the [`crate::nn`] graph.

mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::corpus::{Batch, CLS_ID};
use crate::error::{Error, Result};
use crate::nn::{Binder, Graph, Param, ParamSet, Tensor, LAYER_NORM_EPS};
use crate::seed;

pub const SOCIO_HEAD: &str = "socio";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Longest input including the leading CLS.
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            max_len: 128,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            dropout_prob: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config(format!("encoder sizes must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!("max_len {} leaves no room after CLS", self.max_len)));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!("dropout_prob {} outside [0, 1)", self.dropout_prob)));
        }
        Ok(())
    }

    /// Parameter count of the encoder body plus MLM head (no task heads).
    pub fn param_count(&self) -> usize {
        let (v, l, d, f) = (self.vocab_size, self.max_len, self.d_model, self.d_ff);
        let per_layer = 2 * 2 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
        v * d + l * d + self.n_layers * per_layer + 2 * d + d * v + v
    }
}

/// Training mode turns dropout on and draws its masks from the given stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut seed::Rng),
}

pub struct EncoderOutput {
    /// `[B×L×d]`
    pub hidden: Tensor,
    /// Per layer, `[B·H×L×L]` attention probabilities.
    pub attention: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: ParamSet,
    heads: BTreeMap<String, usize>,
}

fn xavier(rng: &mut seed::Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()
}

fn normal(rng: &mut seed::Rng, n: usize, sd: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl EncoderModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let mut params = ParamSet::new();
        let init = |name: &str| seed::rng(config.seed, &format!("init/{name}"));

        params.insert("embed.token", Param::new(vec![v, d], normal(&mut init("embed.token"), v * d, 0.02)));
        params.insert(
            "embed.position",
            Param::new(vec![config.max_len, d], normal(&mut init("embed.position"), config.max_len * d, 0.02)),
        );
        let linear = |params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize| {
            let w = xavier(&mut init(name), fan_in, fan_out);
            params.insert(format!("{name}.w"), Param::new(vec![fan_in, fan_out], w));
            params.insert(format!("{name}.b"), Param::zeros(vec![fan_out]));
        };
        for i in 0..config.n_layers {
            for ln in ["ln1", "ln2"] {
                params.insert(format!("layer{i}.{ln}.gain"), Param::filled(vec![d], 1.0));
                params.insert(format!("layer{i}.{ln}.bias"), Param::zeros(vec![d]));
            }
            for proj in ["q", "k", "v", "o"] {
                linear(&mut params, &format!("layer{i}.attn.{proj}"), d, d);
            }
            linear(&mut params, &format!("layer{i}.ffn.in"), d, f);
            linear(&mut params, &format!("layer{i}.ffn.out"), f, d);
        }
        params.insert("final_ln.gain", Param::filled(vec![d], 1.0));
        params.insert("final_ln.bias", Param::zeros(vec![d]));
        linear(&mut params, "mlm", d, v);
        Ok(Self {
            config,
            params,
            heads: BTreeMap::new(),
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: ParamSet, heads: BTreeMap<String, usize>) -> Self {
        Self { config, params, heads }
    }

    pub fn heads(&self) -> &BTreeMap<String, usize> {
        &self.heads
    }

    pub fn has_head(&self, name: &str) -> bool {
        self.heads.contains_key(name)
    }

    /// Creates a `d → n_classes` head unless one with that name exists.
    pub fn ensure_head(&mut self, name: &str, n_classes: usize) -> Result<()> {
        if let Some(&c) = self.heads.get(name) {
            if c != n_classes {
                return Err(Error::Config(format!("head `{name}` has {c} classes, requested {n_classes}")));
            }
            return Ok(());
        }
        if n_classes < 2 {
            return Err(Error::Config(format!("head `{name}` needs at least two classes")));
        }
        let d = self.config.d_model;
        let mut rng = seed::rng(self.config.seed, &format!("init/head.{name}"));
        self.params
            .insert(format!("head.{name}.w"), Param::new(vec![d, n_classes], xavier(&mut rng, d, n_classes)));
        self.params.insert(format!("head.{name}.b"), Param::zeros(vec![n_classes]));
        self.heads.insert(name.to_string(), n_classes);
        Ok(())
    }

    pub fn drop_head(&mut self, name: &str) {
        if self.heads.remove(name).is_some() {
            self.params.remove(&format!("head.{name}.w"));
            self.params.remove(&format!("head.{name}.b"));
        }
    }

    /// Removes every task head, leaving embeddings, encoder body and MLM head.
    pub fn drop_all_heads(&mut self) {
        let names: Vec<String> = self.heads.keys().cloned().collect();
        for n in names {
            self.drop_head(&n);
        }
    }

    fn bind(&self, g: &mut Graph, b: &mut Binder, name: &str) -> Result<Tensor> {
        b.bind(g, &self.params, name)
    }

    fn dropout(&self, g: &mut Graph, x: Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        match mode {
            Mode::Train(rng) if self.config.dropout_prob > 0.0 => {
                let p = self.config.dropout_prob;
                let keep = 1.0 / (1.0 - p);
                let mask = (0..g.value(x).len())
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                g.dropout(x, mask)
            }
            _ => Ok(x),
        }
    }

    fn layer_norm(&self, g: &mut Graph, b: &mut Binder, x: Tensor, name: &str) -> Result<Tensor> {
        let gain = self.bind(g, b, &format!("{name}.gain"))?;
        let bias = self.bind(g, b, &format!("{name}.bias"))?;
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }

    fn linear(&self, g: &mut Graph, b: &mut Binder, x: Tensor, name: &str) -> Result<Tensor> {
        let w = self.bind(g, b, &format!("{name}.w"))?;
        let bias = self.bind(g, b, &format!("{name}.b"))?;
        g.linear(x, w, bias)
    }

    /// Encodes a padded batch with positions `0..L`.
    pub fn encode(&self, g: &mut Graph, b: &mut Binder, batch: &Batch, mode: Mode<'_>) -> Result<EncoderOutput> {
        let positions: Vec<usize> = (0..batch.batch_size()).flat_map(|_| 0..batch.seq_len).collect();
        self.encode_with_positions(g, b, &batch.input_ids, &batch.lengths, batch.seq_len, &positions, mode)
    }

    /// Encodes `[B×L]` ids with explicit position ids.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_with_positions(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        input_ids: &[usize],
        lengths: &[usize],
        seq_len: usize,
        positions: &[usize],
        mut mode: Mode<'_>,
    ) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let batch = lengths.len();
        if batch == 0 {
            return Err(Error::EmptyBatch("encode"));
        }
        if input_ids.len() != batch * seq_len || positions.len() != input_ids.len() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: vec![batch, seq_len],
                rhs: vec![input_ids.len(), positions.len()],
            });
        }
        if seq_len > cfg.max_len {
            return Err(Error::Index {
                what: "sequence length",
                index: seq_len,
                bound: cfg.max_len + 1,
            });
        }
        for (i, &len) in lengths.iter().enumerate() {
            if len == 0 || len > seq_len {
                return Err(Error::Index {
                    what: "sequence length",
                    index: len,
                    bound: seq_len + 1,
                });
            }
            if input_ids[i * seq_len] != CLS_ID {
                return Err(Error::Contract(format!("sequence {i} does not start with CLS")));
            }
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= cfg.max_len) {
            return Err(Error::Index {
                what: "position",
                index: p,
                bound: cfg.max_len,
            });
        }

        let (d, heads) = (cfg.d_model, cfg.n_heads);
        let dh = d / heads;
        let tokens = self.bind(g, b, "embed.token")?;
        let pos_table = self.bind(g, b, "embed.position")?;
        let tok = g.embedding_lookup(tokens, input_ids)?;
        let pos = g.embedding_lookup(pos_table, positions)?;
        let mut x = g.add(tok, pos)?;
        x = self.dropout(g, x, &mut mode)?;

        let split_index = split_heads_index(batch, seq_len, heads, dh);
        let merge_index = merge_heads_index(batch, seq_len, heads, dh);
        let valid: Vec<usize> = lengths
            .iter()
            .flat_map(|&len| std::iter::repeat_n(len, heads * seq_len))
            .collect();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attention = Vec::with_capacity(cfg.n_layers);

        for layer in 0..cfg.n_layers {
            let p = format!("layer{layer}");
            let h = self.layer_norm(g, b, x, &format!("{p}.ln1"))?;
            let mut qkv = Vec::with_capacity(3);
            for proj in ["q", "k", "v"] {
                let t = self.linear(g, b, h, &format!("{p}.attn.{proj}"))?;
                qkv.push(g.gather(t, split_index.clone(), &[batch * heads, seq_len, dh])?);
            }
            let scores = g.batch_matmul(qkv[0], qkv[1], true)?;
            let scores = g.scale(scores, scale);
            let probs = g.masked_softmax(scores, valid.clone())?;
            attention.push(probs);
            let ctx = g.batch_matmul(probs, qkv[2], false)?;
            let ctx = g.gather(ctx, merge_index.clone(), &[batch * seq_len, d])?;
            let out = self.linear(g, b, ctx, &format!("{p}.attn.o"))?;
            let out = self.dropout(g, out, &mut mode)?;
            x = g.add(x, out)?;

            let h = self.layer_norm(g, b, x, &format!("{p}.ln2"))?;
            let f = self.linear(g, b, h, &format!("{p}.ffn.in"))?;
            let f = g.gelu(f);
            let f = self.linear(g, b, f, &format!("{p}.ffn.out"))?;
            let f = self.dropout(g, f, &mut mode)?;
            x = g.add(x, f)?;
        }
        let x = self.layer_norm(g, b, x, "final_ln")?;
        let hidden = g.reshape(x, &[batch, seq_len, d])?;
        Ok(EncoderOutput { hidden, attention })
    }

    pub fn head_logits(&self, g: &mut Graph, b: &mut Binder, pooled: Tensor, head: &str) -> Result<Tensor> {
        if !self.has_head(head) {
            return Err(Error::Config(format!("unknown head `{head}`")));
        }
        self.linear(g, b, pooled, &format!("head.{head}"))
    }

    /// MLM logits `[M×V]` for the masked positions, batch order then
    /// position order.
    pub fn mlm_logits(&self, g: &mut Graph, b: &mut Binder, hidden: Tensor, masked_positions: &[Vec<usize>]) -> Result<Tensor> {
        let rows = masked_rows(g.shape(hidden), masked_positions)?;
        let flat = flatten_hidden(g, hidden)?;
        let gathered = g.select_rows(flat, &rows)?;
        self.linear(g, b, gathered, "mlm")
    }
}

fn split_heads_index(batch: usize, seq: usize, heads: usize, dh: usize) -> Vec<usize> {
    let d = heads * dh;
    let mut index = Vec::with_capacity(batch * seq * d);
    for b in 0..batch {
        for h in 0..heads {
            for l in 0..seq {
                let base = (b * seq + l) * d + h * dh;
                index.extend(base..base + dh);
            }
        }
    }
    index
}

fn merge_heads_index(batch: usize, seq: usize, heads: usize, dh: usize) -> Vec<usize> {
    let d = heads * dh;
    let mut index = Vec::with_capacity(batch * seq * d);
    for b in 0..batch {
        for l in 0..seq {
            for h in 0..heads {
                let base = ((b * heads + h) * seq + l) * dh;
                index.extend(base..base + dh);
            }
        }
    }
    index
}

fn flatten_hidden(g: &mut Graph, hidden: Tensor) -> Result<Tensor> {
    let shape = g.shape(hidden).to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            op: "pooling",
            lhs: shape,
            rhs: vec![3],
        });
    }
    g.reshape(hidden, &[shape[0] * shape[1], shape[2]])
}

fn masked_rows(shape: &[usize], masked_positions: &[Vec<usize>]) -> Result<Vec<usize>> {
    let (batch, seq) = (shape[0], shape[1]);
    if masked_positions.len() != batch {
        return Err(Error::Dimension {
            op: "masked positions",
            lhs: shape.to_vec(),
            rhs: vec![masked_positions.len()],
        });
    }
    let mut rows = Vec::new();
    for (b, ps) in masked_positions.iter().enumerate() {
        for &p in ps {
            if p >= seq {
                return Err(Error::Index {
                    what: "masked position",
                    index: p,
                    bound: seq,
                });
            }
            rows.push(b * seq + p);
        }
    }
    Ok(rows)
}

/// Position-0 vectors of `[B×L×d]` hidden states.
pub fn cls_representation(g: &mut Graph, hidden: Tensor) -> Result<Tensor> {
    let shape = g.shape(hidden).to_vec();
    let flat = flatten_hidden(g, hidden)?;
    let rows: Vec<usize> = (0..shape[0]).map(|b| b * shape[1]).collect();
    g.select_rows(flat, &rows)
}

/// Per sequence, the mean hidden vector over its masked positions.
pub fn ctx_masked_mean(g: &mut Graph, hidden: Tensor, masked_positions: &[Vec<usize>]) -> Result<Tensor> {
    let shape = g.shape(hidden).to_vec();
    if let Some(b) = masked_positions.iter().position(Vec::is_empty) {
        return Err(Error::Contract(format!("sequence {b} has no masked positions")));
    }
    masked_rows(&shape, masked_positions)?;
    let seq = shape[1];
    let segments = masked_positions
        .iter()
        .enumerate()
        .map(|(b, ps)| ps.iter().map(|p| b * seq + p).collect())
        .collect();
    let flat = flatten_hidden(g, hidden)?;
    g.segment_mean(flat, segments)
}

#[cfg(test)]
mod tests;
