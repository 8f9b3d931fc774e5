//! Specialization objectives: masked-token NLL, sub-group cross-entropy and
//! their homoscedastic-uncertainty weighting.

use crate::error::{Error, Result};
use crate::nn::{Binder, Graph, Param, ParamSet, Tensor};

pub const ETA_MLM: &str = "eta.mlm";
pub const ETA_SOCIO: &str = "eta.socio";

/// Mean negative log-likelihood of the original tokens at the masked
/// positions (`logits` is `[M×V]`).
pub fn mlm_loss(g: &mut Graph, logits: Tensor, targets: &[usize]) -> Result<Tensor> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch("mlm_loss"));
    }
    g.softmax_cross_entropy(logits, targets)
}

/// Mean cross-entropy of the sub-group prediction (`logits` is `[B×2]`).
pub fn socio_loss(g: &mut Graph, logits: Tensor, groups: &[usize]) -> Result<Tensor> {
    if groups.is_empty() {
        return Err(Error::EmptyBatch("socio_loss"));
    }
    g.softmax_cross_entropy(logits, groups)
}

/// `½(e^{−η}·L + η)` for a task loss `L` and its learnable log-variance `η`.
pub fn weighted_task_loss(g: &mut Graph, loss: Tensor, eta: Tensor) -> Result<Tensor> {
    let neg = g.scale(eta, -1.0);
    let precision = g.exp(neg);
    let scaled = g.mul(precision, loss)?;
    let total = g.add(scaled, eta)?;
    Ok(g.scale(total, 0.5))
}

/// Learnable log-variances of the MLM and sub-group tasks, both starting at
/// zero (unit weighting up to the global ½).
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyWeights {
    params: ParamSet,
}

impl Default for UncertaintyWeights {
    fn default() -> Self {
        Self::new(0.0, 0.0)
    }
}

impl UncertaintyWeights {
    pub fn new(eta_mlm: f64, eta_socio: f64) -> Self {
        let mut params = ParamSet::new();
        params.insert(ETA_MLM, Param::new(vec![1], vec![eta_mlm]));
        params.insert(ETA_SOCIO, Param::new(vec![1], vec![eta_socio]));
        Self { params }
    }

    pub fn eta_mlm(&self) -> f64 {
        self.params.get(ETA_MLM).expect("eta.mlm present").values[0]
    }

    pub fn eta_socio(&self) -> f64 {
        self.params.get(ETA_SOCIO).expect("eta.socio present").values[0]
    }

    /// Effective multiplier `e^{−η}/2` on each task loss.
    pub fn effective_weights(&self) -> (f64, f64) {
        ((-self.eta_mlm()).exp() / 2.0, (-self.eta_socio()).exp() / 2.0)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.all_finite()
    }
}

/// Sum of the two uncertainty-weighted task losses.
pub fn joint_loss(
    g: &mut Graph,
    binder: &mut Binder,
    l_mlm: Tensor,
    l_socio: Tensor,
    weights: &UncertaintyWeights,
) -> Result<Tensor> {
    let eta_mlm = binder.bind(g, weights.params(), ETA_MLM)?;
    let eta_socio = binder.bind(g, weights.params(), ETA_SOCIO)?;
    let a = weighted_task_loss(g, l_mlm, eta_mlm)?;
    let b = weighted_task_loss(g, l_socio, eta_socio)?;
    g.add(a, b)
}
