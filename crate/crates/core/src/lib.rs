//! Random forests whose candidate-variable sampling is moderated by co-data.
//!
//! The workflow is: fit a base forest with uniform candidate sampling, model
//! each variable's split frequency from auxiliary per-variable information
//! (the co-data), threshold and normalize the fitted probabilities, and refit
//! the forest with those probabilities as candidate sampling weights.
//!
//! * [`forest`]: the tree ensemble engine with weighted candidate sampling.
//! * [`codata`]: quasi-binomial co-data model with monotone spline terms.
//! * [`pipeline`]: base fit, weight derivation, refit, tuning and cross-validation.
//! * [`metrics`]: AUC, Brier score, error rate, Kendall's tau-b, selection stability.
//! * [`io`]: CSV ingestion, preprocessing, synthetic data, model files and reports.

pub mod codata;
pub mod error;
pub mod forest;
pub mod io;
pub mod metrics;
pub mod pipeline;

pub use error::{CorfError, Result};
