//! Item bank calibration with logistic response models.
//!
//! Ability is integrated out against a standard normal prior, so fitted
//! models carry item parameters only. Calibration data must be restricted to
//! first exposures; [`ResponseMatrix::from_log`] does that.

mod fit;
mod matrix;
mod model;
mod quadrature;
mod report;
mod select;

use thiserror::Error;

pub use fit::{fit, fit_from, initial_model, log_likelihood, log_likelihood_on, score, FitConfig};
pub use matrix::ResponseMatrix;
pub use model::{
    prob_correct, IrtModel, ItemFlag, ItemParams, Variant, ALPHA_BOUNDS, BETA_BOUNDS, GUESSING_BOUNDS,
};
pub use quadrature::GaussHermite;
pub use report::{average_student_report, AverageStudentReport, ItemSummary, HISTOGRAM_BINS};
pub use select::{fit_nested_chain, lrt_compare, select_model, Comparison, Selection};

use crate::log::LogError;
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum IrtError {
    #[error("response matrix is empty")]
    EmptyMatrix,
    #[error("item `{0}` has no responses")]
    ItemWithoutResponses(String),
    #[error("item index {0} out of range")]
    ItemIndex(usize),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("student `{student}` has two responses to item `{item}`")]
    DuplicateCell { student: String, item: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{smaller} is not nested in {larger}")]
    NotNested { smaller: Variant, larger: Variant },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
