//! Dev-metric early stopping with best-snapshot restoration.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Minimize,
    Maximize,
}

impl Objective {
    fn better(self, candidate: f64, best: f64) -> bool {
        match self {
            Objective::Minimize => candidate < best,
            Objective::Maximize => candidate > best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub objective: Objective,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, objective: Objective) -> Self {
        Self {
            patience,
            objective,
            best: None,
            best_epoch: None,
            since_improvement: 0,
        }
    }

    /// Records a dev metric; returns true when it is a strict improvement.
    /// Non-finite metrics never improve.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = metric.is_finite() && self.best.is_none_or(|b| self.objective.better(metric, b));
        if improved {
            self.best = Some(metric);
            self.best_epoch = Some(epoch);
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopOutcome<S> {
    pub stopper: EarlyStopping,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub history: Vec<f64>,
    /// State after the final epoch, before restoration.
    pub last: S,
}

/// Runs `epoch_fn` (one training epoch returning the dev metric) until the
/// epoch limit or until `patience` epochs pass without improvement, then
/// restores `state` to the best-dev snapshot. With no improving epoch (or
/// zero epochs) the state is left as it was before training.
pub fn fit<S, F>(state: &mut S, max_epochs: usize, patience: usize, objective: Objective, mut epoch_fn: F) -> Result<LoopOutcome<S>>
where
    S: Clone,
    F: FnMut(&mut S, usize) -> Result<f64>,
{
    let mut stopper = EarlyStopping::new(patience, objective);
    let mut best = state.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..max_epochs {
        let metric = epoch_fn(state, epoch)?;
        history.push(metric);
        if stopper.observe(epoch, metric) {
            best = state.clone();
        }
        if stopper.should_stop() && epoch + 1 < max_epochs {
            stopped_early = true;
            break;
        }
    }
    let last = std::mem::replace(state, best);
    Ok(LoopOutcome {
        stopper,
        epochs_run: history.len(),
        stopped_early,
        history,
        last,
    })
}
