//! Downstream fine-tuning, macro F1, the experiment grid and result tables.

mod grid;
mod metrics;
mod report;
mod task;
mod train;

pub use grid::{
    append_results, completed_cells, read_results, run_grid, vanilla_encoder, Cell, ExperimentRecord, GridConfig,
    GridFailure, GridMethod, GridOutcome, Scope, RESULTS_HEADER,
};
pub use metrics::{macro_f1, per_class_f1};
pub use report::{render_csv, render_text, tables, ResultRow, ResultTable};
pub use task::{Portion, Task, TaskData, TaskSpec};
pub use train::{evaluate_f1, finetune, finetune_at, predict, FinetuneConfig, FinetuneOutcome, FINETUNE_LRS, TASK_HEAD};
