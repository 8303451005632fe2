//! Optimization, the supervised training loop and evaluation metrics.

mod fit;
mod metrics;
mod optim;

pub use fit::{evaluate_loss, log_to_writer, train, EpochRecord, TrainConfig, TrainingLog};
pub use metrics::{
    class_metrics, confusion_matrix, evaluate, roc_auc, roc_curve, ClassMetrics, EvaluationReport, RocCurve,
};
pub use optim::{collect_grads, step_lr, Adam};
