//! Annotation quality control from stochastic classifier predictions.
//!
//! - [`triage`]: aggregate sample matrices into per-instance uncertainty and
//!   split instances into certain and uncertain sets.
//! - [`cleaning`]: cross-fitted removal of high-uncertainty training labels.
//! - [`mm`]: Bayesian multivariate normal mixture ensembles over log-odds.
//! - [`metrics`]: confusion metrics, Brier score and calibration error.
//! - [`baselines`]: bag-of-words classifiers and bootstrap sampling.
//! - [`synth`]: synthetic ensemble frames and text corpora with known truth.
//! - [`io`]: file formats and the annotation event store.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cleaning;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mm;
pub mod synth;
pub mod triage;
pub mod types;

pub use cleaning::{crossfit_clean, CleaningOutcome, CleaningPlan, Predictor};
pub use error::{
    BaselineError, CleaningError, DatasetError, MetricsError, MmError, ProbError, StoreError, SynthError, TriageError,
};
pub use metrics::{brier_score, calibration_report, confusion_metrics, CalibrationReport, MetricsReport};
pub use triage::{aggregate_samples, rank_and_partition, Budget, SampleMatrix, TriageResult, UncertaintyRecord};
pub use types::{validate_prob_vector, Dataset, Instance, InstanceStatus, LabelSpace, ProbVector, SplitTag};
