//! Training loop, cross-validation and metrics.

pub mod config;
pub mod crossval;
pub mod fit;
pub mod folds;
pub mod metrics;
pub mod optim;
pub mod probe;
pub mod profile;
mod schedule;

pub use config::{DomainSource, OptimizerKind, TrainConfig};
pub use crossval::{
    check_bags, run_crossval, run_fold, CrossvalReport, FoldOutcome, FoldRun, Summary,
};
pub use fit::{
    domain_targets, embed, evaluate, fit, predict, samples, train_epoch, EpochLog, Sample,
};
pub use folds::{split, stratified_kfold};
pub use metrics::{auroc, classification_report, ClassMetrics, MetricsReport};
pub use optim::{Optimizer, OptimizerSettings};
pub use probe::{LinearProbe, ProbeOptions};
pub use profile::{peak_resident_bytes, CostProfile};
pub use schedule::lambda_schedule;
