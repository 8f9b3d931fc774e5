//! Desk-scale laboratory for sociodemographic specialization of transformer
//! encoders: continued masked language modeling and uncertainty-weighted
//! multi-task training, downstream fine-tuning, and the analysis tools used
//! to audit what the specialization actually changed.

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod nn;
pub mod seed;
pub mod specialize;

pub use error::{Error, Result};
