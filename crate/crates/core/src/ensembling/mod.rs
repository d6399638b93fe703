//! Student/teacher training with fixed or adaptive teacher ensembling.

mod diagnostics;
mod losses;
mod teacher;
mod trainer;

pub use diagnostics::{DiagnosticsLog, EpochMetrics};
pub use losses::{class_weights, consistency_loss, supervised_loss};
pub use teacher::{adaptive_teacher_update, fixed_teacher_update, AdaptiveState};
pub use trainer::{
    evaluate, init_student, stream_rng, teacher_consistency_gradients, train, StepReport, StepSettings, TrainOutput, TrainState,
    Trainer, TrainingData,
};
