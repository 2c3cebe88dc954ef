//! Hypothesis testing for two-arm randomized trials on estimated individual
//! treatment effects.
//!
//! Each subject's counterfactual trajectory under the other arm is imputed
//! by synthetic intervention (SI), giving one effect estimate per subject.
//! The mean effect is tested against a critical value tuned on effect
//! vectors resampled from the control arm alone. The [`evaluation`] harness
//! measures power and significance level over simulated trials.

pub mod cli;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod ite;
pub mod methods;
pub mod rng;
pub mod si;
pub mod synthetic;
pub mod testing;
pub mod vt;

pub use data::{Outcome, OutcomeSpec, RctDataset, TrajectoryMatrix};
pub use error::{Error, Result};
pub use evaluation::{measure, EvaluationReport};
pub use ite::{merged_ites, EstimatorChoice, MergedItes};
pub use methods::{run_secrets, run_standard, run_variant, MethodChoice, SecretsConfig};
pub use testing::{TestOutcome, TestingParams};
