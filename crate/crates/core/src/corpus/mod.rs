//! Reviews, vocabularies, the planted-signal generator, line-delimited
//! ingestion, task splits and dynamic masking.

mod generate;
mod ingest;
mod mask;
mod split;
mod vocab;

use serde::{Deserialize, Serialize};

pub use generate::{generate, GeneratorConfig, VocabLayout};
pub use ingest::{ingest, ingest_str, write_corpus, CorpusRecord};
pub use mask::{dynamic_mask, mask_count, Batch, MaskAction, MaskedBatch, MaskingConfig, DEFAULT_MASK_RATE};
pub use split::{
    balance_groups, holdout, sample_specialization, split, BalanceKey, LanguageSelector, SpecializationSizes,
    SplitConfig, SplitSet, SPLIT_RATIOS,
};
pub use vocab::{Vocabulary, CLS_ID, MASK_ID, NUM_SPECIAL, PAD_ID, UNK_ID};

pub const NUM_SENTIMENTS: usize = 3;
pub const NUM_TOPICS: usize = 5;
pub const NUM_GROUPS: usize = 2;

/// Sentiment labels in class-index order.
pub const SENTIMENT_LABELS: [&str; NUM_SENTIMENTS] = ["negative", "neutral", "positive"];

/// Sociodemographic factor; each has two sub-groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Gender,
    Age,
}

impl Factor {
    pub const ALL: [Factor; 2] = [Factor::Gender, Factor::Age];

    /// Sub-group labels in group-index order.
    pub fn group_labels(self) -> [&'static str; NUM_GROUPS] {
        match self {
            Factor::Gender => ["F", "M"],
            Factor::Age => ["<35", ">45"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Gender => "gender",
            Factor::Age => "age",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gender" => Some(Factor::Gender),
            "age" => Some(Factor::Age),
            _ => None,
        }
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// In-domain (review text) or out-of-domain specialization data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    In,
    Out,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::In => 0,
            Domain::Out => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Domain::In),
            1 => Some(Domain::Out),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::In => "in",
            Domain::Out => "out",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in" => Some(Domain::In),
            "out" => Some(Domain::Out),
            _ => None,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub id: u64,
    pub tokens: Vec<usize>,
    pub language: usize,
    pub domain: Domain,
    pub group: usize,
    pub sentiment: usize,
    pub topic: usize,
}
