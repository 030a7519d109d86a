//! Optimizers, gradient verification and the dictionary-model training loops.

mod adam;
mod gradcheck;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use trainer::{
    train_conditional_model, train_source_model, DatasetSplit, EpochStats, TrainConfig, TrainOutcome,
};
