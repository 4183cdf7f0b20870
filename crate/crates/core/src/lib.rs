//! A laboratory for process-aware recommender systems.
//!
//! The crate covers the full cycle of a monitoring-and-intervention study on
//! an unemployment-benefits style process:
//!
//! - [`event_log`]: CSV event logs grouped into time-ordered traces.
//! - [`prefix`]: prefix generation, monthly retention and feature encoding.
//! - [`learners`]: L2-regularized logistic regression and discrete AdaBoost.
//! - [`selection`]: AUC, cumulative lift, train/test split, stratified
//!   cross-validation and the pooled-versus-bucketed comparison.
//! - [`predictor`]: the deployable bundle of per-month models.
//! - [`simulator`]: synthetic populations, a latent reclamation model and the
//!   email funnel.
//! - [`experiment`]: A/B harness, group-rate tests, funnel and
//!   characteristics analysis, historical pre-assessment.
//! - [`commands`]: the subcommands behind the `parlab` binary.

pub mod calendar;
pub mod commands;
pub mod config;
pub mod error;
pub mod event_log;
pub mod experiment;
pub mod learners;
pub mod predictor;
pub mod prefix;
pub mod seeds;
pub mod selection;
pub mod simulator;

pub use error::{Error, Result};
