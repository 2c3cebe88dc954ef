//! Test statistics, classical tests and the tuned critical value.

mod bootstrap;
mod classical;
mod critical;

pub use bootstrap::{
    adjusted_interval, bca_bootstrap_test, bca_interval, percentile_interval, BcaInterval, DEFAULT_N_BOOT,
};
pub use classical::{one_sample_t_stat, one_sample_t_test, welch_test, TestOutcome};
pub use critical::{get_alpha, run_hypothesis_test, sample_null, tune_critical_value, NullSample, TestingParams};
