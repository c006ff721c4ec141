//! The experimental protocol: 5-fold train/characterize/test rotation,
//! per-classifier FAR/FRR versus window size, fused ROC/EER via the
//! threshold sweep, and per-classifier contribution analysis.

pub mod folds;
pub mod harness;
pub mod metrics;
pub mod report;

use std::io;

use thiserror::Error;

pub use folds::{plan_folds, Experiment, FoldPlan, FoldSlice, NUM_FOLDS, ROTATION};
pub use harness::{
    characterize_experiment, prepare, run_evaluation, run_evaluation_traced, train_experiment,
    ContributionRow, CurveRow, EerRow, EvaluationReport, ExperimentModels, HarnessConfig,
    IndividualRow, PreparedDataset, UserCharacterization, Variant, DEFAULT_WINDOW_SIZES_SECS,
};
pub use metrics::{characterize, contribution, eer_from_curve, roc_and_eer, EerEstimate, ErrorEstimate, RocPoint};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("insufficient activity: {events} events spanning {active_secs} active seconds")]
    InsufficientActivity { events: usize, active_secs: i64 },
    #[error("need at least 2 usable users, got {0}")]
    TooFewUsers(usize),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
