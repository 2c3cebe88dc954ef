//! Null-distribution sampling and the data-driven critical value.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mean, Outcome, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::ite::{merged_ites, EstimatorChoice};
use crate::rng;
use crate::testing::{one_sample_t_stat, TestOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestingParams {
    pub alpha_target: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    pub t_limit_exp: f64,
    pub n_s: usize,
    pub delta_alpha: f64,
    pub max_depth: usize,
}

impl Default for TestingParams {
    fn default() -> Self {
        Self {
            alpha_target: 0.05,
            t_lower: 3.0,
            t_upper: 5.0,
            t_limit_exp: 2.0,
            n_s: 10,
            delta_alpha: 1e-3,
            max_depth: 50,
        }
    }
}

impl TestingParams {
    pub fn with_alpha(alpha_target: f64) -> Self {
        Self {
            alpha_target,
            ..Self::default()
        }
    }

    /// `alpha_target = 1` is accepted: it drives the search to `t = 0`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_target > 0.0
            && self.alpha_target <= 1.0
            && self.t_lower >= 0.0
            && self.t_upper >= self.t_lower
            && self.t_upper.is_finite()
            && self.t_limit_exp > 0.0
            && self.t_limit_exp.is_finite()
            && self.n_s >= 2
            && self.delta_alpha > 0.0
            && self.max_depth >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid testing parameters: {self:?}")))
        }
    }
}

/// Test statistics drawn under the null. Entries may be infinite (zero-spread
/// resamples) but never NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSample {
    statistics: Vec<f64>,
}

impl NullSample {
    pub fn new(statistics: Vec<f64>) -> Result<Self> {
        if statistics.is_empty() {
            return Err(Error::invalid("null sample is empty"));
        }
        if statistics.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("null sample contains NaN"));
        }
        Ok(Self { statistics })
    }

    pub fn statistics(&self) -> &[f64] {
        &self.statistics
    }

    pub fn len(&self) -> usize {
        self.statistics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statistics.is_empty()
    }
}

/// Fraction of null statistics with `|s| > t`.
pub fn get_alpha(s_null: &NullSample, t: f64) -> f64 {
    let hits = s_null.statistics.iter().filter(|s| s.abs() > t).count();
    hits as f64 / s_null.len() as f64
}

/// Draw `T` null statistics by resampling control rows with replacement into
/// pseudo-arms of sizes `n_ctrl` and `n_treat`. Iterations run in parallel on
/// independent substreams of one master seed taken from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn sample_null<R: Rng + ?Sized>(
    x_ctrl: &TrajectoryMatrix,
    n_ctrl: usize,
    n_treat: usize,
    estimator: &EstimatorChoice,
    outcome: &Outcome,
    t: usize,
    rng: &mut R,
) -> Result<NullSample> {
    if x_ctrl.n_units() < 2 {
        return Err(Error::invalid("null sampling needs >= 2 control units"));
    }
    if t == 0 || n_ctrl == 0 || n_treat == 0 {
        return Err(Error::invalid("null sampling needs T, n_ctrl, n_treat >= 1"));
    }
    let master = rng::master_seed(rng);
    let n = x_ctrl.n_units();
    let statistics = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng::substream(master, rng::label::NULL_SAMPLE, i as u64);
            let mut draw = |k: usize| {
                let idx: Vec<usize> = (0..k).map(|_| stream.random_range(0..n)).collect();
                x_ctrl.select_rows(&idx)
            };
            let pseudo_ctrl = draw(n_ctrl);
            let pseudo_treat = draw(n_treat);
            let merged = merged_ites(&pseudo_ctrl, &pseudo_treat, estimator, outcome, &mut stream)?;
            one_sample_t_stat(&merged.concat())
        })
        .collect::<Result<Vec<f64>>>()?;
    NullSample::new(statistics)
}

fn linspace_closed(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Critical value whose empirical two-sided size on `s_null` is within
/// `delta_alpha` of `alpha_target`, found by a bracketing sweep.
///
/// Each sweep scores `n_s` ascending candidates on `[t_lower, t_upper]` and
/// returns the first acceptable one. Otherwise the bracket keeps the half
/// on the target's side of the middle candidate, widening upward or
/// downward by `t_limit_exp` when the target lies beyond an end. After
/// `max_depth` sweeps the best candidate seen is returned (smallest `t` on
/// ties).
pub fn tune_critical_value(s_null: &NullSample, params: &TestingParams) -> Result<f64> {
    params.validate()?;
    let target = params.alpha_target;
    let (mut lo, mut hi) = (params.t_lower, params.t_upper);
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..params.max_depth {
        let candidates = linspace_closed(lo, hi, params.n_s);
        let alphas: Vec<f64> = candidates.iter().map(|&t| get_alpha(s_null, t)).collect();
        for (&t, &a) in candidates.iter().zip(&alphas) {
            let err = (a - target).abs();
            if err < params.delta_alpha {
                return Ok(t);
            }
            let better = best.is_none_or(|(be, bt)| err < be || (err == be && t < bt));
            if better {
                best = Some((err, t));
            }
        }
        let k = params.n_s / 2;
        if target < alphas[k] {
            lo = candidates[k];
            if target < alphas[params.n_s - 1] {
                hi += params.t_limit_exp;
            }
        } else {
            hi = candidates[k];
            if target > alphas[0] {
                lo = (lo - params.t_limit_exp).max(0.0);
            }
        }
    }
    Ok(best.expect("max_depth >= 1").1)
}

/// Full SECRETS decision: tune a critical value on `T` null statistics and
/// compare the one-sample t statistic of `y_merged` against it.
#[allow(clippy::too_many_arguments)]
pub fn run_hypothesis_test<R: Rng + ?Sized>(
    x_ctrl: &TrajectoryMatrix,
    y_merged: &[f64],
    estimator: &EstimatorChoice,
    outcome: &Outcome,
    t: usize,
    params: &TestingParams,
    n_ctrl: usize,
    n_treat: usize,
    rng: &mut R,
) -> Result<TestOutcome> {
    if y_merged.len() != n_ctrl + n_treat {
        return Err(Error::shape(format!(
            "merged ITE vector has {} entries, expected {} + {}",
            y_merged.len(),
            n_ctrl,
            n_treat
        )));
    }
    params.validate()?;
    let s_null = sample_null(x_ctrl, n_ctrl, n_treat, estimator, outcome, t, rng)?;
    let critical = tune_critical_value(&s_null, params)?;
    let statistic = one_sample_t_stat(y_merged)?;
    Ok(TestOutcome::decide(statistic, critical, mean(y_merged)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeSpec;
    use crate::si::SiHyperparams;
    use proptest::prelude::{prop_assert, proptest};
    use rand_distr::{Distribution, StandardNormal};

    fn magnitudes() -> NullSample {
        let s = (1..=100)
            .map(|k| if k % 2 == 0 { k as f64 } else { -(k as f64) })
            .collect();
        NullSample::new(s).unwrap()
    }

    #[test]
    fn get_alpha_examples() {
        let s = NullSample::new(vec![-3.0, 1.0, 2.0]).unwrap();
        assert!((get_alpha(&s, 1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(get_alpha(&s, 0.0), 1.0);
        assert_eq!(get_alpha(&s, 3.0), 0.0);
        let inf = NullSample::new(vec![f64::INFINITY, f64::NEG_INFINITY, 0.0]).unwrap();
        assert!((get_alpha(&inf, 1e300) - 2.0 / 3.0).abs() < 1e-15);
        assert!(NullSample::new(vec![f64::NAN]).is_err());
        assert!(NullSample::new(vec![]).is_err());
    }

    #[test]
    fn finds_exact_quantile() {
        let t = tune_critical_value(&magnitudes(), &TestingParams::default()).unwrap();
        assert_eq!(get_alpha(&magnitudes(), t), 0.05);
        assert!((95.0..96.0).contains(&t), "{t}");
    }

    #[test]
    fn tracks_normal_quantile() {
        let mut r = rng::from_seed(11);
        let s: Vec<f64> = (0..10_000)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
            .collect();
        let mut abs: Vec<f64> = s.iter().map(|v| v.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let q95 = abs[(0.95 * 10_000.0) as usize - 1];
        let t = tune_critical_value(&NullSample::new(s).unwrap(), &TestingParams::default()).unwrap();
        assert!((t - q95).abs() < 0.1, "{t} vs {q95}");
    }

    #[test]
    fn alpha_one_reaches_zero() {
        let t = tune_critical_value(&magnitudes(), &TestingParams::with_alpha(1.0)).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn fallback_returns_best_seen() {
        // Three values: achievable sizes are 0, 1/3, 2/3, 1. Target 0.05 is
        // unreachable within 1e-3; the best is 0 (t >= 3), smallest such t is 3.
        let s = NullSample::new(vec![0.5, -1.0, 2.0]).unwrap();
        let params = TestingParams {
            max_depth: 5,
            ..TestingParams::default()
        };
        let t = tune_critical_value(&s, &params).unwrap();
        assert_eq!(get_alpha(&s, t), 0.0);
        assert!(t >= 2.0);
    }

    #[test]
    fn rejects_invalid_params() {
        let bad = TestingParams {
            t_upper: 1.0,
            ..TestingParams::default()
        };
        assert!(tune_critical_value(&magnitudes(), &bad).is_err());
        let bad = TestingParams {
            n_s: 1,
            ..TestingParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(TestingParams::with_alpha(0.0).validate().is_err());
    }

    fn noisy_control(seed: u64, n: usize) -> TrajectoryMatrix {
        let mut r = rng::from_seed(seed);
        let v = [1.0, 1.3, 1.6, 2.0];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let u: f64 = r.random_range(1.0..3.0);
                v.iter()
                    .map(|vt| u * vt + 0.2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
                    .collect()
            })
            .collect();
        TrajectoryMatrix::from_rows(&rows).unwrap()
    }

    fn change() -> Outcome {
        Outcome::new(OutcomeSpec::default(), None, 4).unwrap()
    }

    #[test]
    fn null_sample_is_finite_centered_and_deterministic() {
        let x = noisy_control(3, 30);
        let est = EstimatorChoice::default();
        let s = sample_null(&x, 30, 30, &est, &change(), 200, &mut rng::from_seed(5)).unwrap();
        assert_eq!(s.len(), 200);
        assert!(s.statistics().iter().all(|v| v.is_finite()));
        let mut sorted = s.statistics().to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = 0.5 * (sorted[99] + sorted[100]);
        assert!(median.abs() < 0.5, "median {median}");

        let again = sample_null(&x, 30, 30, &est, &change(), 200, &mut rng::from_seed(5)).unwrap();
        assert_eq!(s, again);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = single
            .install(|| sample_null(&x, 30, 30, &est, &change(), 200, &mut rng::from_seed(5)))
            .unwrap();
        assert_eq!(s, serial);
    }

    #[test]
    fn huge_effect_rejects() {
        let x = noisy_control(4, 20);
        let est = EstimatorChoice::FixedSi(SiHyperparams::new(0.1, 0.5).unwrap());
        let y: Vec<f64> = (0..40).map(|i| 1000.0 + (i as f64 * 0.37).sin()).collect();
        let out = run_hypothesis_test(
            &x,
            &y,
            &est,
            &change(),
            30,
            &TestingParams::default(),
            20,
            20,
            &mut rng::from_seed(1),
        )
        .unwrap();
        assert!(out.reject);
        assert_eq!(out.reject, out.statistic.abs() > out.critical_value);
        assert!((out.ate_estimate - mean(&y)).abs() < 1e-12);
        assert!(run_hypothesis_test(
            &x,
            &y,
            &est,
            &change(),
            30,
            &TestingParams::default(),
            20,
            21,
            &mut rng::from_seed(1)
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn get_alpha_non_increasing(
            s in proptest::collection::vec(-50.0f64..50.0, 1..60),
            a in 0.0f64..60.0,
            b in 0.0f64..60.0,
        ) {
            let s = NullSample::new(s).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(get_alpha(&s, lo) >= get_alpha(&s, hi));
        }

        #[test]
        fn tuned_value_is_near_optimal(
            s in proptest::collection::vec(-20.0f64..20.0, 20..200),
            alpha in 0.01f64..0.5,
        ) {
            let s = NullSample::new(s).unwrap();
            let t = tune_critical_value(&s, &TestingParams::with_alpha(alpha)).unwrap();
            prop_assert!(t >= 0.0);
            // Best achievable size: any threshold at 0 or at a sample magnitude.
            let mut cands: Vec<f64> = s.statistics().iter().map(|v| v.abs()).collect();
            cands.push(0.0);
            let best = cands
                .iter()
                .map(|&c| (get_alpha(&s, c) - alpha).abs())
                .fold(f64::INFINITY, f64::min);
            let got = (get_alpha(&s, t) - alpha).abs();
            prop_assert!(got <= best + 1.0 / s.len() as f64 + 1e-12, "got {} best {}", got, best);
        }
    }
}
