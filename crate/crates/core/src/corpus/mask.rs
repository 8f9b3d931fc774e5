//! Padded token batches and dynamic masking.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::{CLS_ID, MASK_ID, NUM_SPECIAL, PAD_ID};
use super::Review;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_MASK_RATE: f64 = 0.15;

/// Number of masked positions for a sequence of `len` tokens.
pub fn mask_count(len: usize, rate: f64) -> usize {
    ((rate * len as f64).round() as usize).clamp(1, len.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub rate: f64,
    /// Share of selected positions replaced by MASK.
    pub mask_share: f64,
    /// Share of selected positions replaced by a random non-special id.
    pub random_share: f64,
    /// Maximum encoder sequence length including the leading CLS.
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            rate: DEFAULT_MASK_RATE,
            mask_share: 0.8,
            random_share: 0.1,
            max_len: 128,
            vocab_size: NUM_SPECIAL + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// `[B×L]` token ids with CLS at position 0 and PAD after each sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seq_len: usize,
    pub groups: Vec<usize>,
}

impl Batch {
    /// Prepends CLS and truncates each review to `max_len − 1` tokens.
    pub fn from_reviews<'a, I>(reviews: I, max_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Review>,
    {
        let rows: Vec<(Vec<usize>, usize)> = reviews
            .into_iter()
            .map(|r| {
                let keep = r.tokens.len().min(max_len.saturating_sub(1));
                let mut ids = Vec::with_capacity(keep + 1);
                ids.push(CLS_ID);
                ids.extend_from_slice(&r.tokens[..keep]);
                (ids, r.group)
            })
            .collect();
        Self::from_rows(rows)
    }

    fn from_rows(rows: Vec<(Vec<usize>, usize)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch("batch"));
        }
        let seq_len = rows.iter().map(|(ids, _)| ids.len()).max().unwrap_or(1);
        let mut input_ids = vec![PAD_ID; rows.len() * seq_len];
        let mut lengths = Vec::with_capacity(rows.len());
        let mut groups = Vec::with_capacity(rows.len());
        for (b, (ids, group)) in rows.into_iter().enumerate() {
            input_ids[b * seq_len..b * seq_len + ids.len()].copy_from_slice(&ids);
            lengths.push(ids.len());
            groups.push(group);
        }
        Ok(Self {
            input_ids,
            lengths,
            seq_len,
            groups,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.input_ids[b * self.seq_len..b * self.seq_len + self.lengths[b]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub batch: Batch,
    /// Per sequence, sorted positions in input coordinates (CLS is 0).
    pub masked_positions: Vec<Vec<usize>>,
    /// Original ids at the masked positions, batch order then position order.
    pub masked_targets: Vec<usize>,
    pub actions: Vec<MaskAction>,
    pub group_labels: Vec<usize>,
}

impl MaskedBatch {
    pub fn total_masked(&self) -> usize {
        self.masked_targets.len()
    }
}

/// Masks `round(rate·L)` (at least one) positions of each truncated review,
/// chosen uniformly without replacement from a stream keyed by
/// `(seed, step)`. Selected positions become MASK, a random non-special id,
/// or stay unchanged with the configured shares.
pub fn dynamic_mask(reviews: &[&Review], config: &MaskingConfig, seed: u64, step: u64) -> Result<MaskedBatch> {
    if config.vocab_size <= NUM_SPECIAL {
        return Err(Error::Config("masking vocabulary has no regular tokens".into()));
    }
    let mut rng = seed::rng_indexed(seed, "dynamic_mask", step);
    let mut rows = Vec::with_capacity(reviews.len());
    let mut masked_positions = Vec::with_capacity(reviews.len());
    let mut masked_targets = Vec::new();
    let mut actions = Vec::new();
    for r in reviews {
        let keep = r.tokens.len().min(config.max_len.saturating_sub(1));
        if keep == 0 {
            return Err(Error::Contract(format!("review {} has no tokens to mask", r.id)));
        }
        let mut ids = Vec::with_capacity(keep + 1);
        ids.push(CLS_ID);
        ids.extend_from_slice(&r.tokens[..keep]);

        let count = mask_count(keep, config.rate);
        let mut picked = rand::seq::index::sample(&mut rng, keep, count).into_vec();
        picked.sort_unstable();
        let mut positions = Vec::with_capacity(count);
        for p in picked {
            let pos = p + 1;
            masked_targets.push(ids[pos]);
            let u: f64 = rng.random();
            let action = if u < config.mask_share {
                ids[pos] = MASK_ID;
                MaskAction::Mask
            } else if u < config.mask_share + config.random_share {
                ids[pos] = rng.random_range(NUM_SPECIAL..config.vocab_size);
                MaskAction::Random
            } else {
                MaskAction::Keep
            };
            actions.push(action);
            positions.push(pos);
        }
        masked_positions.push(positions);
        rows.push((ids, r.group));
    }
    let batch = Batch::from_rows(rows)?;
    let group_labels = batch.groups.clone();
    Ok(MaskedBatch {
        batch,
        masked_positions,
        masked_targets,
        actions,
        group_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;

    fn review(len: usize) -> Review {
        Review {
            id: 0,
            tokens: (0..len).map(|i| NUM_SPECIAL + i % 50).collect(),
            language: 0,
            domain: Domain::In,
            group: 1,
            sentiment: 0,
            topic: 0,
        }
    }

    fn cfg() -> MaskingConfig {
        MaskingConfig {
            vocab_size: 60,
            max_len: 129,
            ..Default::default()
        }
    }

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(20, 0.15), 3);
        assert_eq!(mask_count(1, 0.15), 1);
        let r = review(20);
        let m = dynamic_mask(&[&r], &cfg(), 0, 0).unwrap();
        assert_eq!(m.masked_positions[0].len(), 3);
        assert_eq!(m.masked_targets.len(), 3);
        let r = review(1);
        let m = dynamic_mask(&[&r], &cfg(), 0, 0).unwrap();
        assert_eq!(m.masked_positions[0], vec![1]);
    }

    #[test]
    fn masks_are_fresh_per_step_and_reproducible() {
        let r = review(100);
        let a = dynamic_mask(&[&r], &cfg(), 5, 1).unwrap();
        let b = dynamic_mask(&[&r], &cfg(), 5, 1).unwrap();
        let c = dynamic_mask(&[&r], &cfg(), 5, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.masked_positions, c.masked_positions);
    }

    #[test]
    fn targets_record_original_ids_and_cls_is_never_masked() {
        let r = review(40);
        let m = dynamic_mask(&[&r, &r], &cfg(), 3, 0).unwrap();
        let mut k = 0;
        for (b, positions) in m.masked_positions.iter().enumerate() {
            assert_eq!(m.batch.row(b)[0], CLS_ID);
            for &p in positions {
                assert!(p >= 1);
                assert_eq!(m.masked_targets[k], r.tokens[p - 1]);
                k += 1;
            }
        }
    }

    #[test]
    fn truncation_happens_before_masking() {
        let r = review(200);
        let c = MaskingConfig {
            max_len: 128,
            ..cfg()
        };
        let m = dynamic_mask(&[&r], &c, 0, 0).unwrap();
        assert_eq!(m.batch.lengths[0], 128);
        assert_eq!(m.masked_positions[0].len(), mask_count(127, 0.15));
    }

    #[test]
    fn batch_padding() {
        let (a, b) = (review(3), review(5));
        let batch = Batch::from_reviews([&a, &b], 128).unwrap();
        assert_eq!(batch.seq_len, 6);
        assert_eq!(batch.lengths, vec![4, 6]);
        assert_eq!(&batch.input_ids[4..6], &[PAD_ID, PAD_ID]);
    }
}
