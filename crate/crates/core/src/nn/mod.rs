//! Dense reverse-mode autodiff: the graph, its primitives, named parameter
//! storage and finite-difference checking.

mod graph;
mod gradcheck;
mod kernels;
mod params;

pub use graph::{Graph, Tensor};
pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use params::{Binder, Grads, Param, ParamSet};

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
