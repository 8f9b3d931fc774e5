//! Synthetic review generator with planted group, sentiment, topic,
//! language and domain signal.
//!
//! Every (language, domain) pair owns a disjoint filler block and disjoint
//! sentiment/topic cue blocks; every (factor, language, group) owns a
//! disjoint marker block. Languages share only the special tokens.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, NUM_SPECIAL};
use super::{Domain, Factor, Review, NUM_GROUPS, NUM_SENTIMENTS, NUM_TOPICS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub factor: Factor,
    pub n_languages: usize,
    pub n_domains: usize,
    pub filler_per_domain: usize,
    pub cues_per_class: usize,
    pub markers_per_group: usize,
    /// Per-position probability of drawing from the group's marker set.
    pub marker_prob: [f64; NUM_GROUPS],
    pub sentiment_cue_prob: f64,
    pub topic_cue_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sentiment_prior: [f64; NUM_SENTIMENTS],
    pub topic_prior: [f64; NUM_TOPICS],
    /// Explicit token layout; when absent the disjoint default is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<VocabLayout>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            factor: Factor::Gender,
            n_languages: 5,
            n_domains: 2,
            filler_per_domain: 100,
            cues_per_class: 4,
            markers_per_group: 6,
            marker_prob: [0.1, 0.0],
            sentiment_cue_prob: 0.15,
            topic_cue_prob: 0.15,
            min_len: 8,
            max_len: 24,
            sentiment_prior: [1.0 / 3.0; NUM_SENTIMENTS],
            topic_prior: [0.2; NUM_TOPICS],
            layout: None,
            seed: 0,
        }
    }
}

/// Token-id blocks of a synthetic vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabLayout {
    /// `[language][domain]`
    pub filler: Vec<Vec<Vec<usize>>>,
    /// `[language][domain][class]`
    pub sentiment_cues: Vec<Vec<Vec<Vec<usize>>>>,
    /// `[language][domain][class]`
    pub topic_cues: Vec<Vec<Vec<Vec<usize>>>>,
    /// `[factor][language][group]`
    pub markers: Vec<Vec<Vec<Vec<usize>>>>,
    pub tokens: Vec<String>,
}

fn factor_index(f: Factor) -> usize {
    match f {
        Factor::Gender => 0,
        Factor::Age => 1,
    }
}

impl VocabLayout {
    /// Disjoint default layout. Markers exist for both factors so gender and
    /// age corpora share one vocabulary.
    pub fn build(config: &GeneratorConfig) -> Self {
        let mut tokens = Vec::new();
        let next = |name: String, tokens: &mut Vec<String>| {
            tokens.push(name);
            NUM_SPECIAL + tokens.len() - 1
        };
        let mut filler = Vec::new();
        let mut sentiment_cues = Vec::new();
        let mut topic_cues = Vec::new();
        for l in 0..config.n_languages {
            let (mut fl, mut sl, mut tl) = (Vec::new(), Vec::new(), Vec::new());
            for d in 0..config.n_domains {
                fl.push(
                    (0..config.filler_per_domain)
                        .map(|i| next(format!("l{l}d{d}w{i}"), &mut tokens))
                        .collect(),
                );
                sl.push(
                    (0..NUM_SENTIMENTS)
                        .map(|c| {
                            (0..config.cues_per_class)
                                .map(|i| next(format!("l{l}d{d}s{c}x{i}"), &mut tokens))
                                .collect()
                        })
                        .collect(),
                );
                tl.push(
                    (0..NUM_TOPICS)
                        .map(|c| {
                            (0..config.cues_per_class)
                                .map(|i| next(format!("l{l}d{d}t{c}x{i}"), &mut tokens))
                                .collect()
                        })
                        .collect(),
                );
            }
            filler.push(fl);
            sentiment_cues.push(sl);
            topic_cues.push(tl);
        }
        let markers = Factor::ALL
            .iter()
            .map(|f| {
                let tag = &f.as_str()[..1];
                (0..config.n_languages)
                    .map(|l| {
                        (0..NUM_GROUPS)
                            .map(|g| {
                                (0..config.markers_per_group)
                                    .map(|i| next(format!("l{l}{tag}{g}m{i}"), &mut tokens))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            filler,
            sentiment_cues,
            topic_cues,
            markers,
            tokens,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(self.tokens.iter().cloned())
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIAL + self.tokens.len()
    }

    /// Checks that marker sets are pairwise disjoint and disjoint from every
    /// cue set, and that every block is non-empty and in range.
    pub fn validate(&self, config: &GeneratorConfig) -> Result<()> {
        let bound = self.vocab_size();
        let check_block = |what: &str, ids: &[usize]| -> Result<()> {
            if ids.is_empty() {
                return Err(Error::Config(format!("{what} is empty")));
            }
            if let Some(&bad) = ids.iter().find(|&&i| i < NUM_SPECIAL || i >= bound) {
                return Err(Error::Config(format!("{what} contains invalid id {bad}")));
            }
            Ok(())
        };
        let shape_err = |what: &str| Error::Config(format!("layout {what} does not match the configured shape"));
        if self.filler.len() < config.n_languages
            || self.sentiment_cues.len() < config.n_languages
            || self.topic_cues.len() < config.n_languages
        {
            return Err(shape_err("language count"));
        }

        let mut cue_ids = HashSet::new();
        for l in 0..config.n_languages {
            for d in 0..config.n_domains {
                let filler = self.filler[l].get(d).ok_or_else(|| shape_err("domain count"))?;
                check_block(&format!("filler l{l} d{d}"), filler)?;
                let sc = self.sentiment_cues[l].get(d).ok_or_else(|| shape_err("domain count"))?;
                let tc = self.topic_cues[l].get(d).ok_or_else(|| shape_err("domain count"))?;
                if sc.len() != NUM_SENTIMENTS || tc.len() != NUM_TOPICS {
                    return Err(shape_err("class count"));
                }
                for (c, ids) in sc.iter().enumerate() {
                    check_block(&format!("sentiment cue l{l} d{d} c{c}"), ids)?;
                    cue_ids.extend(ids.iter().copied());
                }
                for (c, ids) in tc.iter().enumerate() {
                    check_block(&format!("topic cue l{l} d{d} c{c}"), ids)?;
                    cue_ids.extend(ids.iter().copied());
                }
            }
        }

        let mut marker_owner: std::collections::HashMap<usize, String> = Default::default();
        for (fi, per_lang) in self.markers.iter().enumerate() {
            for (l, groups) in per_lang.iter().enumerate() {
                for (g, ids) in groups.iter().enumerate() {
                    let name = format!("marker f{fi} l{l} g{g}");
                    check_block(&name, ids)?;
                    for &id in ids {
                        if cue_ids.contains(&id) {
                            return Err(Error::Config(format!("{name} overlaps a cue set at token {id}")));
                        }
                        if let Some(prev) = marker_owner.insert(id, name.clone()) {
                            if prev != name {
                                return Err(Error::Config(format!("{name} overlaps {prev} at token {id}")));
                            }
                        }
                    }
                }
            }
        }
        let fi = factor_index(config.factor);
        let groups = self
            .markers
            .get(fi)
            .and_then(|m| m.get(config.n_languages.saturating_sub(1)))
            .ok_or_else(|| shape_err("marker table"))?;
        if groups.len() != NUM_GROUPS {
            return Err(shape_err("group count"));
        }
        Ok(())
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = self
            .marker_prob
            .iter()
            .chain([&self.sentiment_cue_prob, &self.topic_cue_prob]);
        for p in probs {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length range ({}, {}) must satisfy 1 <= min <= max",
                self.min_len, self.max_len
            )));
        }
        if self.n_languages == 0 || self.n_domains == 0 || self.n_domains > 2 {
            return Err(Error::Config("need >= 1 language and 1 or 2 domains".into()));
        }
        for prior in [&self.sentiment_prior[..], &self.topic_prior[..]] {
            if prior.iter().any(|p| !p.is_finite() || *p < 0.0) || prior.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!("invalid class prior {prior:?}")));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> VocabLayout {
        self.layout.clone().unwrap_or_else(|| VocabLayout::build(self))
    }
}

fn pick(rng: &mut seed::Rng, ids: &[usize]) -> usize {
    ids[rng.random_range(0..ids.len())]
}

/// Generates `n_per_cell` reviews for every (language, domain, group) cell.
/// Each cell draws from its own derived stream, so cells are independent of
/// generation order.
pub fn generate(config: &GeneratorConfig, n_per_cell: usize) -> Result<Vec<Review>> {
    if n_per_cell == 0 {
        return Err(Error::Config("n_per_cell must be at least 1".into()));
    }
    config.validate()?;
    let layout = config.layout();
    layout.validate(config)?;
    let fi = factor_index(config.factor);
    let sentiment_dist = WeightedIndex::new(config.sentiment_prior)
        .map_err(|e| Error::Config(format!("sentiment prior: {e}")))?;
    let topic_dist =
        WeightedIndex::new(config.topic_prior).map_err(|e| Error::Config(format!("topic prior: {e}")))?;

    let mut reviews = Vec::with_capacity(config.n_languages * config.n_domains * NUM_GROUPS * n_per_cell);
    let mut next_id = 0u64;
    for language in 0..config.n_languages {
        for d in 0..config.n_domains {
            for group in 0..NUM_GROUPS {
                let label = format!("generate/{}/l{language}/d{d}/g{group}", config.factor);
                let mut rng = seed::rng(config.seed, &label);
                let markers = &layout.markers[fi][language][group];
                let filler = &layout.filler[language][d];
                for _ in 0..n_per_cell {
                    let sentiment = sentiment_dist.sample(&mut rng);
                    let topic = topic_dist.sample(&mut rng);
                    let len = rng.random_range(config.min_len..=config.max_len);
                    let sent_cues = &layout.sentiment_cues[language][d][sentiment];
                    let topic_cues = &layout.topic_cues[language][d][topic];
                    let tokens = (0..len)
                        .map(|_| {
                            if rng.random::<f64>() < config.marker_prob[group] {
                                pick(&mut rng, markers)
                            } else if rng.random::<f64>() < config.sentiment_cue_prob {
                                pick(&mut rng, sent_cues)
                            } else if rng.random::<f64>() < config.topic_cue_prob {
                                pick(&mut rng, topic_cues)
                            } else {
                                pick(&mut rng, filler)
                            }
                        })
                        .collect();
                    reviews.push(Review {
                        id: next_id,
                        tokens,
                        language,
                        domain: Domain::from_index(d).expect("at most two domains"),
                        group,
                        sentiment,
                        topic,
                    });
                    next_id += 1;
                }
            }
        }
    }
    Ok(reviews)
}
