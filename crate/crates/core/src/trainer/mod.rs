//! Masking, learning-rate schedule, pretraining, fine-tuning and
//! evaluation.

mod config;
mod data;
mod engine;
mod log;
mod mask;
mod run;
mod schedule;

pub use config::{Precision, Task, TrainConfig, PRECISION_ENV};
pub use data::{DataConfig, Dataset, SplitName};
pub use engine::{BatchOrder, Engine};
pub use log::{EvalRecord, RunLog, StepRecord, RUNLOG_HEADER};
pub use mask::sample_mask;
pub use run::{
    evaluate, finetune, frozen_parts, load_model, mnp_accuracy, pretrain_contrastive, pretrain_mnp, Evaluation,
    ModelMeta, Outcome, Prediction, TargetScale, Trained, PREDICTIONS_HEADER,
};
pub use schedule::lr_at;
