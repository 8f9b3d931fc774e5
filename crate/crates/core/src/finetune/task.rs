//! Downstream tasks, group portions and per-language task data.

use serde::{Deserialize, Serialize};

use crate::corpus::{balance_groups, BalanceKey, Factor, Review, SplitSet, NUM_GROUPS, NUM_SENTIMENTS, NUM_TOPICS};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "TD")]
    Td,
    #[serde(rename = "AC-SA")]
    AcSa,
    #[serde(rename = "AC-TD")]
    AcTd,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Sa, Task::Td, Task::AcSa, Task::AcTd];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sa => "SA",
            Task::Td => "TD",
            Task::AcSa => "AC-SA",
            Task::AcTd => "AC-TD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Sa => NUM_SENTIMENTS,
            Task::Td => NUM_TOPICS,
            Task::AcSa | Task::AcTd => NUM_GROUPS,
        }
    }

    pub fn is_attribute(self) -> bool {
        matches!(self, Task::AcSa | Task::AcTd)
    }

    pub fn label(self, r: &Review) -> usize {
        match self {
            Task::Sa => r.sentiment,
            Task::Td => r.topic,
            Task::AcSa | Task::AcTd => r.group,
        }
    }

    fn balance_key(self) -> Option<BalanceKey> {
        match self {
            Task::AcSa => Some(BalanceKey::Sentiment),
            Task::AcTd => Some(BalanceKey::Topic),
            _ => None,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fine-tuning/evaluation subset: one sub-group, or both mixed (`X`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Portion {
    #[serde(rename = "group0")]
    Group0,
    #[serde(rename = "group1")]
    Group1,
    #[serde(rename = "X")]
    Mixed,
}

impl Portion {
    pub const ALL: [Portion; 3] = [Portion::Group0, Portion::Group1, Portion::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Portion::Group0 => "group0",
            Portion::Group1 => "group1",
            Portion::Mixed => "X",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// Column label under a factor, e.g. `F`, `>45` or `X`.
    pub fn label(self, factor: Factor) -> &'static str {
        match self {
            Portion::Group0 => factor.group_labels()[0],
            Portion::Group1 => factor.group_labels()[1],
            Portion::Mixed => "X",
        }
    }

    pub fn group(self) -> Option<usize> {
        match self {
            Portion::Group0 => Some(0),
            Portion::Group1 => Some(1),
            Portion::Mixed => None,
        }
    }

    pub fn admits(self, r: &Review) -> bool {
        self.group().is_none_or(|g| r.group == g)
    }
}

impl std::fmt::Display for Portion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub portion: Portion,
    pub factor: Factor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskData {
    pub train: Vec<Review>,
    pub dev: Vec<Review>,
    pub test: Vec<Review>,
}

impl TaskSpec {
    pub fn new(task: Task, portion: Portion, factor: Factor) -> Result<Self> {
        let spec = Self { task, portion, factor };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_classes(&self) -> usize {
        self.task.n_classes()
    }

    /// Attribute classification needs both groups, so only the mixed
    /// portion is meaningful.
    pub fn validate(&self) -> Result<()> {
        if self.task.is_attribute() && self.portion != Portion::Mixed {
            return Err(Error::Config(format!(
                "{} is only defined on the mixed portion, not {}",
                self.task,
                self.portion.label(self.factor)
            )));
        }
        Ok(())
    }

    /// Train/dev/test reviews of one language: attribute tasks are balanced
    /// over groups inside every sentiment or topic class; group portions keep
    /// only that group.
    pub fn select(&self, splits: &SplitSet, language: usize, seed: u64) -> Result<TaskData> {
        self.validate()?;
        let pick = |reviews: &[Review], label: &str| -> Vec<Review> {
            let own: Vec<Review> = reviews
                .iter()
                .filter(|r| r.language == language && self.portion.admits(r))
                .cloned()
                .collect();
            match self.task.balance_key() {
                Some(key) => balance_groups(&own, key, seed::derive(seed, &format!("balance/{label}"))),
                None => own,
            }
        };
        let data = TaskData {
            train: pick(&splits.train, "train"),
            dev: pick(&splits.dev, "dev"),
            test: pick(&splits.test, "test"),
        };
        for (name, part) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
            if part.is_empty() {
                return Err(Error::Data(format!(
                    "no {name} reviews for {} / language {language} / portion {}",
                    self.task,
                    self.portion.label(self.factor)
                )));
            }
        }
        Ok(data)
    }
}
