use serde::{Deserialize, Serialize};

use crate::data::mean;
use crate::dist::t_quantile;
use crate::error::{Error, Result};
use crate::ite::MergedItes;

/// Decision of a two-sided test. `reject == (|statistic| > critical_value)`
/// holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub reject: bool,
    pub statistic: f64,
    pub critical_value: f64,
    pub ate_estimate: f64,
    pub ites: Option<MergedItes>,
}

impl TestOutcome {
    pub fn decide(statistic: f64, critical_value: f64, ate_estimate: f64) -> Self {
        Self {
            reject: statistic.abs() > critical_value,
            statistic,
            critical_value,
            ate_estimate,
            ites: None,
        }
    }

    pub fn with_ites(mut self, ites: MergedItes) -> Self {
        self.ites = Some(ites);
        self
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// `mean / (sd / sqrt(n))` with the n-1 standard deviation. Zero spread gives
/// 0 for a zero mean and a signed infinity otherwise.
pub fn one_sample_t_stat(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::invalid(format!("t statistic needs n >= 2, got {}", y.len())));
    }
    let m = mean(y);
    let sd = sample_variance(y).sqrt();
    Ok(ratio_or_signed_inf(m, sd / (y.len() as f64).sqrt()))
}

fn ratio_or_signed_inf(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(num)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Two-sided Welch test on outcome samples. The ATE estimate is
/// `mean(treat) - mean(ctrl)`.
pub fn welch_test(o_ctrl: &[f64], o_treat: &[f64], alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    for (name, g) in [("control", o_ctrl), ("treatment", o_treat)] {
        if g.len() < 2 {
            return Err(Error::invalid(format!(
                "{name} group needs >= 2 values, got {}",
                g.len()
            )));
        }
    }
    let (n1, n2) = (o_ctrl.len() as f64, o_treat.len() as f64);
    let q1 = sample_variance(o_ctrl) / n1;
    let q2 = sample_variance(o_treat) / n2;
    let diff = mean(o_treat) - mean(o_ctrl);
    let se = (q1 + q2).sqrt();
    let statistic = ratio_or_signed_inf(diff, se);
    let df_den = q1 * q1 / (n1 - 1.0) + q2 * q2 / (n2 - 1.0);
    let df = if df_den > 0.0 {
        (q1 + q2).powi(2) / df_den
    } else {
        n1 + n2 - 2.0
    };
    Ok(TestOutcome::decide(statistic, t_quantile(1.0 - alpha / 2.0, df), diff))
}

/// Two-sided one-sample t-test of zero mean.
pub fn one_sample_t_test(y: &[f64], alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let statistic = one_sample_t_stat(y)?;
    let critical = t_quantile(1.0 - alpha / 2.0, (y.len() - 1) as f64);
    Ok(TestOutcome::decide(statistic, critical, mean(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(r: &mut rng::Stream, n: usize, mu: f64, sd: f64) -> Vec<f64> {
        (0..n)
            .map(|_| mu + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r))
            .collect()
    }

    #[test]
    fn t_stat_examples() {
        assert_eq!(one_sample_t_stat(&[1.0, -1.0]).unwrap(), 0.0);
        // mean 2, sd 1, n 3: 2 / (1 / sqrt 3)
        let t = one_sample_t_stat(&[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!((t - 3.4641).abs() < 1e-4);
        assert_eq!(one_sample_t_stat(&[2.5; 3]).unwrap(), f64::INFINITY);
        assert_eq!(one_sample_t_stat(&[-2.5; 3]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(one_sample_t_stat(&[0.0; 4]).unwrap(), 0.0);
        assert!(one_sample_t_stat(&[1.0]).is_err());
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 4.0, 3.5];
        let out = welch_test(&a, &a, 0.05).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.reject);

        let mut r = rng::from_seed(1);
        let ctrl = normals(&mut r, 50, 0.0, 1.0);
        let treat: Vec<f64> = ctrl.iter().map(|x| x + 10.0).collect();
        let out = welch_test(&ctrl, &treat, 0.05).unwrap();
        assert!(out.reject);
        assert!((out.ate_estimate - 10.0).abs() < 1e-12);
        assert_eq!(out.reject, out.statistic.abs() > out.critical_value);

        assert!(welch_test(&[1.0], &a, 0.05).is_err());
        assert!(welch_test(&a, &a, 1.5).is_err());
    }

    // Hand-worked: ctrl [1,2,3] (var 1), treat [2,4,6,8] (var 20/3).
    // se^2 = 1/3 + 5/3 = 2, t = (5 - 2) / sqrt 2,
    // df = 4 / ((1/9)/2 + (25/9)/3) = 4 / (1/18 + 25/27) = 4.0754...
    #[test]
    fn welch_matches_hand_computation() {
        let out = welch_test(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0, 8.0], 0.05).unwrap();
        assert!((out.statistic - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        let df = 4.0 / (1.0 / 18.0 + 25.0 / 27.0);
        assert!((out.critical_value - t_quantile(0.975, df)).abs() < 1e-12);
    }

    #[test]
    fn one_sample_examples() {
        assert!(!one_sample_t_test(&[0.0; 10], 0.05).unwrap().reject);
        let mut r = rng::from_seed(2);
        assert!(one_sample_t_test(&normals(&mut r, 30, 1.0, 0.01), 0.05).unwrap().reject);
    }

    #[test]
    fn calibration_under_the_null() {
        let mut r = rng::from_seed(3);
        let reps = 2000;
        let (mut welch, mut one) = (0, 0);
        for _ in 0..reps {
            let a = normals(&mut r, 50, 0.0, 1.0);
            let b = normals(&mut r, 50, 0.0, 1.0);
            welch += welch_test(&a, &b, 0.05).unwrap().reject as usize;
            let c = normals(&mut r, 100, 0.0, 1.0);
            one += one_sample_t_test(&c, 0.05).unwrap().reject as usize;
        }
        let (welch, one) = (welch as f64 / reps as f64, one as f64 / reps as f64);
        assert!((0.035..=0.065).contains(&welch), "welch alpha {welch}");
        assert!((0.035..=0.065).contains(&one), "one-sample alpha {one}");
    }

    proptest! {
        #[test]
        fn t_stat_scale_invariant(y in proptest::collection::vec(-10.0f64..10.0, 2..20), c in 0.01f64..100.0) {
            let a = one_sample_t_stat(&y).unwrap();
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let b = one_sample_t_stat(&scaled).unwrap();
            prop_assume!(a.is_finite());
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
        }

        #[test]
        fn welch_shift_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 2..15),
            b in proptest::collection::vec(-10.0f64..10.0, 2..15),
            k in -50.0f64..50.0,
        ) {
            let base = welch_test(&a, &b, 0.05).unwrap();
            let sa: Vec<f64> = a.iter().map(|v| v + k).collect();
            let sb: Vec<f64> = b.iter().map(|v| v + k).collect();
            let shifted = welch_test(&sa, &sb, 0.05).unwrap();
            prop_assume!(base.statistic.is_finite());
            prop_assert!((base.statistic - shifted.statistic).abs() < 1e-6 * (1.0 + base.statistic.abs()));
        }
    }
}
