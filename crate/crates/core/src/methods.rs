//! Analysis pipelines mapping a trial dataset to a test decision.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RctDataset, TrainValRatio};
use crate::error::{Error, Result};
use crate::ite::{merged_ites_with_models, EstimatorChoice, MergedItes};
use crate::si::{logspace, SiHyperparams, SiTuningParams};
use crate::testing::{
    bca_bootstrap_test, one_sample_t_test, run_hypothesis_test, welch_test, TestOutcome, TestingParams, DEFAULT_N_BOOT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodChoice {
    Standard,
    Secrets,
    SecretsVt,
    SecretsT,
    SecretsB,
    /// Harness-only: t-tests on ITEs permuted across trials.
    SecretsTP,
    /// Harness-only: critical value from the pooled null-trial statistics.
    SecretsO,
}

impl MethodChoice {
    pub const ALL: [MethodChoice; 7] = [
        MethodChoice::Standard,
        MethodChoice::Secrets,
        MethodChoice::SecretsVt,
        MethodChoice::SecretsT,
        MethodChoice::SecretsB,
        MethodChoice::SecretsTP,
        MethodChoice::SecretsO,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodChoice::Standard => "Standard",
            MethodChoice::Secrets => "SECRETS",
            MethodChoice::SecretsVt => "SECRETS-VT",
            MethodChoice::SecretsT => "SECRETS-T",
            MethodChoice::SecretsB => "SECRETS-B",
            MethodChoice::SecretsTP => "SECRETS-T-P",
            MethodChoice::SecretsO => "SECRETS-O",
        }
    }

    pub fn is_harness_only(self) -> bool {
        matches!(self, MethodChoice::SecretsTP | MethodChoice::SecretsO)
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodChoice {
    type Err = Error;

    /// Case-insensitive; `_` and `-` are interchangeable.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        MethodChoice::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let known: Vec<_> = MethodChoice::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown method {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// Settings shared by every SECRETS variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretsConfig {
    pub si: SiTuningParams,
    pub vt_ridge_grid: Vec<f64>,
    pub vt_ratio: TrainValRatio,
    pub testing: TestingParams,
    /// Null statistics per test (T).
    pub null_samples: usize,
    pub n_boot: usize,
    /// Reuse the SI hyperparameters tuned on the control arm inside null
    /// sampling instead of re-tuning per draw.
    pub cache_tuning: bool,
}

impl Default for SecretsConfig {
    fn default() -> Self {
        Self {
            si: SiTuningParams::default(),
            vt_ridge_grid: logspace(-3.0, 3.0, 7),
            vt_ratio: TrainValRatio::default(),
            testing: TestingParams::default(),
            null_samples: 100,
            n_boot: DEFAULT_N_BOOT,
            cache_tuning: false,
        }
    }
}

impl SecretsConfig {
    pub const MIN_NULL_SAMPLES: usize = 20;

    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            testing: TestingParams::with_alpha(alpha),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.si.validate()?;
        self.testing.validate()?;
        if self.null_samples < Self::MIN_NULL_SAMPLES {
            return Err(Error::invalid(format!(
                "null_samples must be >= {}, got {}",
                Self::MIN_NULL_SAMPLES,
                self.null_samples
            )));
        }
        if self.n_boot < 1000 {
            return Err(Error::invalid(format!("n_boot must be >= 1000, got {}", self.n_boot)));
        }
        if self.vt_ridge_grid.is_empty() || self.vt_ridge_grid.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(Error::invalid("vt_ridge_grid must be non-empty and non-negative"));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.testing.alpha_target
    }

    fn si_estimator(&self) -> EstimatorChoice {
        EstimatorChoice::SyntheticIntervention(self.si.clone())
    }

    fn vt_estimator(&self) -> EstimatorChoice {
        EstimatorChoice::VirtualTwins {
            ridge_grid: self.vt_ridge_grid.clone(),
            ratio: self.vt_ratio,
        }
    }

    fn null_estimator(&self, base: &EstimatorChoice, tuned: Option<SiHyperparams>) -> EstimatorChoice {
        match (self.cache_tuning, tuned) {
            (true, Some(hp)) => EstimatorChoice::FixedSi(hp),
            _ => base.clone(),
        }
    }
}

fn check_arms(ds: &RctDataset) -> Result<()> {
    if ds.control.n_units() < 2 || ds.treatment.n_units() < 2 {
        return Err(Error::invalid(format!(
            "each arm needs >= 2 units, got {} control and {} treatment",
            ds.control.n_units(),
            ds.treatment.n_units()
        )));
    }
    Ok(())
}

/// Welch test on per-unit outcomes.
pub fn run_standard(ds: &RctDataset, alpha: f64) -> Result<TestOutcome> {
    check_arms(ds)?;
    let outcome = ds.outcome_fn()?;
    welch_test(
        &outcome.evaluate_rows(&ds.control),
        &outcome.evaluate_rows(&ds.treatment),
        alpha,
    )
}

fn ites<R: Rng + ?Sized>(
    ds: &RctDataset,
    estimator: &EstimatorChoice,
    rng: &mut R,
) -> Result<(MergedItes, Option<SiHyperparams>)> {
    check_arms(ds)?;
    merged_ites_with_models(&ds.control, &ds.treatment, estimator, &ds.outcome_fn()?, rng)
}

fn data_driven_test<R: Rng + ?Sized>(
    ds: &RctDataset,
    cfg: &SecretsConfig,
    estimator: EstimatorChoice,
    rng: &mut R,
) -> Result<TestOutcome> {
    cfg.validate()?;
    let (merged, tuned) = ites(ds, &estimator, rng)?;
    let outcome = run_hypothesis_test(
        &ds.control,
        &merged.concat(),
        &cfg.null_estimator(&estimator, tuned),
        &ds.outcome_fn()?,
        cfg.null_samples,
        &cfg.testing,
        ds.control.n_units(),
        ds.treatment.n_units(),
        rng,
    )?;
    Ok(outcome.with_ites(merged))
}

/// SI ITEs for both arms tested against a critical value tuned on null
/// samples drawn from the control arm.
pub fn run_secrets<R: Rng + ?Sized>(ds: &RctDataset, cfg: &SecretsConfig, rng: &mut R) -> Result<TestOutcome> {
    data_driven_test(ds, cfg, cfg.si_estimator(), rng)
}

/// Dispatch a single-trial method. Harness-only methods are rejected.
pub fn run_variant<R: Rng + ?Sized>(
    ds: &RctDataset,
    variant: MethodChoice,
    cfg: &SecretsConfig,
    rng: &mut R,
) -> Result<TestOutcome> {
    match variant {
        MethodChoice::Standard => run_standard(ds, cfg.alpha()),
        MethodChoice::Secrets => run_secrets(ds, cfg, rng),
        MethodChoice::SecretsVt => data_driven_test(ds, cfg, cfg.vt_estimator(), rng),
        MethodChoice::SecretsT => {
            let (merged, _) = ites(ds, &cfg.si_estimator(), rng)?;
            Ok(one_sample_t_test(&merged.concat(), cfg.alpha())?.with_ites(merged))
        }
        MethodChoice::SecretsB => {
            let (merged, _) = ites(ds, &cfg.si_estimator(), rng)?;
            Ok(bca_bootstrap_test(&merged.concat(), cfg.alpha(), cfg.n_boot, rng)?.with_ites(merged))
        }
        MethodChoice::SecretsTP | MethodChoice::SecretsO => Err(Error::HarnessOnly(variant.name())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{OutcomeSpec, TrajectoryMatrix};
    use crate::rng;
    use crate::synthetic::{generate, SyntheticSpec};

    fn rank_one(delta: f64, noise: f64, n: usize, seed: u64) -> RctDataset {
        let spec = SyntheticSpec::rank_one(n, n, vec![1.0, 1.2, 1.5, 1.8], delta, noise);
        generate(&spec, &mut rng::from_seed(seed)).unwrap().0
    }

    fn fast_cfg() -> SecretsConfig {
        SecretsConfig {
            null_samples: 40,
            ..SecretsConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodChoice::ALL {
            assert_eq!(m.name().parse::<MethodChoice>().unwrap(), m);
        }
        assert_eq!("secrets_vt".parse::<MethodChoice>().unwrap(), MethodChoice::SecretsVt);
        assert!("welch".parse::<MethodChoice>().is_err());
    }

    #[test]
    fn standard_examples() {
        let ds = rank_one(0.0, 0.5, 50, 1);
        let shifted = ds.control.map(|v| v);
        let data: Vec<f64> = shifted
            .rows()
            .flat_map(|r| {
                let mut r = r.to_vec();
                *r.last_mut().unwrap() += 10.0;
                r
            })
            .collect();
        let treat = TrajectoryMatrix::from_row_major(50, 4, data).unwrap();
        let big = ds.with_arms(ds.control.clone(), treat);
        let out = run_standard(&big, 0.05).unwrap();
        assert!(out.reject);
        let outcome = big.outcome_fn().unwrap();
        let diff = crate::data::mean(&outcome.evaluate_rows(&big.treatment))
            - crate::data::mean(&outcome.evaluate_rows(&big.control));
        assert_eq!(out.ate_estimate, diff);

        let same = ds.with_arms(ds.control.clone(), ds.control.clone());
        let out = run_standard(&same, 0.05).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.reject);
    }

    #[test]
    fn secrets_detects_large_effect_and_is_deterministic() {
        let ds = rank_one(5.0, 0.1, 40, 2);
        let cfg = fast_cfg();
        let a = run_secrets(&ds, &cfg, &mut rng::from_seed(7)).unwrap();
        assert!(a.reject);
        assert_eq!(a.reject, a.statistic.abs() > a.critical_value);
        let ites = a.ites.as_ref().unwrap();
        assert_eq!(ites.len(), 80);
        assert!((a.ate_estimate - ites.mean()).abs() < 1e-12);
        let b = run_secrets(&ds, &cfg, &mut rng::from_seed(7)).unwrap();
        assert_eq!(a, b);
        let c = run_variant(&ds, MethodChoice::Secrets, &cfg, &mut rng::from_seed(7)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn variants_share_ites_and_differ_in_the_decision() {
        let ds = rank_one(0.3, 0.3, 30, 3);
        let cfg = fast_cfg();
        let s = run_variant(&ds, MethodChoice::Secrets, &cfg, &mut rng::from_seed(9)).unwrap();
        let t = run_variant(&ds, MethodChoice::SecretsT, &cfg, &mut rng::from_seed(9)).unwrap();
        let b = run_variant(&ds, MethodChoice::SecretsB, &cfg, &mut rng::from_seed(9)).unwrap();
        assert_eq!(s.ites, t.ites);
        assert_eq!(s.ites, b.ites);
        assert_eq!(s.statistic, t.statistic);
        assert_eq!(s.ate_estimate, t.ate_estimate);
        for out in [&s, &t, &b] {
            assert_eq!(out.reject, out.statistic.abs() > out.critical_value);
        }
    }

    #[test]
    fn cached_tuning_runs() {
        let ds = rank_one(5.0, 0.1, 30, 4);
        let cfg = SecretsConfig {
            cache_tuning: true,
            ..fast_cfg()
        };
        assert!(run_secrets(&ds, &cfg, &mut rng::from_seed(1)).unwrap().reject);
    }

    #[test]
    fn virtual_twins_recover_linear_effects() {
        let mut r = rng::from_seed(5);
        let mk = |shift: f64, r: &mut rng::Stream| {
            let rows: Vec<Vec<f64>> = (0..25)
                .map(|_| {
                    let b: f64 = r.random_range(1.0..3.0);
                    vec![b, 1.5 * b + shift, 2.0 * b - 1.0 + shift]
                })
                .collect();
            TrajectoryMatrix::from_rows(&rows).unwrap()
        };
        let ctrl = mk(0.0, &mut r);
        let treat = mk(2.0, &mut r);
        let ds = RctDataset::new(ctrl, treat, OutcomeSpec::default(), None, None).unwrap();
        let out = run_variant(&ds, MethodChoice::SecretsVt, &fast_cfg(), &mut rng::from_seed(2)).unwrap();
        for v in out.ites.unwrap().concat() {
            assert!((v - 2.0).abs() < 1e-2, "{v}");
        }
        assert!(out.reject);
    }

    #[test]
    fn harness_only_and_invalid_inputs() {
        let ds = rank_one(1.0, 0.1, 10, 6);
        for m in [MethodChoice::SecretsTP, MethodChoice::SecretsO] {
            let err = run_variant(&ds, m, &fast_cfg(), &mut rng::from_seed(1)).unwrap_err();
            assert!(matches!(err, Error::HarnessOnly(_)));
        }
        let low_t = SecretsConfig {
            null_samples: 5,
            ..SecretsConfig::default()
        };
        assert!(run_secrets(&ds, &low_t, &mut rng::from_seed(1)).is_err());
        let tiny = ds.with_arms(ds.control.select_rows(&[0]), ds.treatment.clone());
        assert!(run_standard(&tiny, 0.05).is_err());
    }
}
