//! Bias-corrected and accelerated (BCa) bootstrap test of zero mean.

use rand::Rng;

use crate::data::mean;
use crate::dist::{normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::testing::TestOutcome;

pub const DEFAULT_N_BOOT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcaInterval {
    pub lower: f64,
    pub upper: f64,
    /// Bias correction.
    pub z0: f64,
    /// Acceleration.
    pub acceleration: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided `(1 - alpha)` interval from a sorted bootstrap distribution with
/// the given bias correction and acceleration. `z0 = a = 0` is the plain
/// percentile interval.
pub fn adjusted_interval(sorted: &[f64], z0: f64, acceleration: f64, alpha: f64) -> (f64, f64) {
    let adjust = |q: f64| {
        let z = normal_quantile(q);
        normal_cdf(z0 + (z0 + z) / (1.0 - acceleration * (z0 + z)))
    };
    (
        quantile_sorted(sorted, adjust(alpha / 2.0)),
        quantile_sorted(sorted, adjust(1.0 - alpha / 2.0)),
    )
}

pub fn percentile_interval(sorted: &[f64], alpha: f64) -> (f64, f64) {
    (
        quantile_sorted(sorted, alpha / 2.0),
        quantile_sorted(sorted, 1.0 - alpha / 2.0),
    )
}

/// Jackknife acceleration of the mean.
fn acceleration(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let total: f64 = y.iter().sum();
    let loo: Vec<f64> = y.iter().map(|v| (total - v) / (n - 1.0)).collect();
    let loo_mean = mean(&loo);
    let (num, den) = loo.iter().fold((0.0, 0.0), |(num, den), l| {
        let d = loo_mean - l;
        (num + d.powi(3), den + d * d)
    });
    if den > 0.0 {
        num / (6.0 * den.powf(1.5))
    } else {
        0.0
    }
}

/// BCa interval for the mean of `y`.
pub fn bca_interval<R: Rng + ?Sized>(y: &[f64], alpha: f64, n_boot: usize, rng: &mut R) -> Result<BcaInterval> {
    let n = y.len();
    let theta = mean(y);
    let mut boot: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| y[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boot.sort_by(f64::total_cmp);

    let below = boot.iter().filter(|b| **b < theta).count() as f64;
    let ties = boot.iter().filter(|b| **b == theta).count() as f64;
    let b = n_boot as f64;
    let p = ((below + 0.5 * ties) / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    let z0 = normal_quantile(p);
    let a = acceleration(y);
    let (lower, upper) = adjusted_interval(&boot, z0, a, alpha);
    Ok(BcaInterval {
        lower,
        upper,
        z0,
        acceleration: a,
    })
}

/// Rejects iff 0 lies outside the two-sided `(1 - alpha)` BCa interval.
///
/// The outcome's statistic is the sample mean; its critical value is
/// `|mean|` minus the signed margin by which 0 falls outside the interval,
/// which keeps `reject == |statistic| > critical_value`. Constant data never
/// rejects.
pub fn bca_bootstrap_test<R: Rng + ?Sized>(y: &[f64], alpha: f64, n_boot: usize, rng: &mut R) -> Result<TestOutcome> {
    if y.len() < 3 {
        return Err(Error::invalid(format!("bootstrap test needs n >= 3, got {}", y.len())));
    }
    if n_boot < 1000 {
        return Err(Error::invalid(format!(
            "bootstrap needs >= 1000 resamples, got {n_boot}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let m = mean(y);
    if y.iter().all(|v| *v == y[0]) {
        return Ok(TestOutcome::decide(m, f64::INFINITY, m));
    }
    let ci = bca_interval(y, alpha, n_boot, rng)?;
    let margin = ci.lower.max(-ci.upper);
    Ok(TestOutcome::decide(m, m.abs() - margin, m))
}
