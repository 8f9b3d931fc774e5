//! Specialization objectives, optimizer and training loop.

mod adam;
mod early_stop;
mod losses;
mod train;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use early_stop::{fit, EarlyStopping, LoopOutcome, Objective};
pub use losses::{joint_loss, mlm_loss, socio_loss, weighted_task_loss, UncertaintyWeights, ETA_MLM, ETA_SOCIO};
pub use train::{
    evaluate, train, train_search, DevEval, EpochLog, Method, Specialized, StepRecord, TrainConfig, TrainState, SPECIALIZATION_LRS,
};
pub(crate) use train::argmax_rows;
