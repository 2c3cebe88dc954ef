//! Monte-Carlo power and size measurement over simulated trials.
//!
//! A trial resamples `n_a` subjects per arm with replacement. Under the
//! alternative each group comes from its own arm; under the null both come
//! from the control arm. Power and significance level are the rejection
//! fractions over `L` trials of each kind.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mean, RctDataset, TrajectoryMatrix};
use crate::dist::{normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::methods::{run_variant, MethodChoice, SecretsConfig};
use crate::rng;
use crate::testing::{one_sample_t_test, TestOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    Null,
    Alternative,
}

impl Setting {
    fn trial_label(self) -> u64 {
        match self {
            Setting::Null => rng::label::TRIAL_NULL,
            Setting::Alternative => rng::label::TRIAL_ALT,
        }
    }

    fn shuffle_label(self) -> u64 {
        match self {
            Setting::Null => rng::label::SHUFFLE_NULL,
            Setting::Alternative => rng::label::SHUFFLE_ALT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSetting {
    pub setting: Setting,
    pub n_a: usize,
}

impl TrialSetting {
    pub fn new(setting: Setting, n_a: usize) -> Result<Self> {
        if n_a < 2 {
            return Err(Error::invalid(format!("n_a must be >= 2, got {n_a}")));
        }
        Ok(Self { setting, n_a })
    }

    pub fn null(n_a: usize) -> Result<Self> {
        Self::new(Setting::Null, n_a)
    }

    pub fn alternative(n_a: usize) -> Result<Self> {
        Self::new(Setting::Alternative, n_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub reject: bool,
    pub ate_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub power: f64,
    pub alpha: f64,
    pub mu0_hat: f64,
    pub mu1_hat: f64,
    pub sigma_hat: f64,
    pub sigma_hat_std: f64,
    pub shift_term: f64,
    pub model_power: f64,
    pub err_alt: f64,
    pub err_null: f64,
    pub trials: usize,
    pub n_a: usize,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

/// `|mu0 - mu1| / sigma`.
pub fn shift_term(mu0: f64, mu1: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok((mu0 - mu1).abs() / sigma)
}

/// Power of a two-sided z-test: `Phi(-z_{1-alpha/2} + |mu0 - mu1| / sigma)`.
pub fn model_power(alpha_target: f64, mu0: f64, mu1: f64, sigma: f64) -> Result<f64> {
    Ok(power_from_shift(alpha_target, shift_term(mu0, mu1, sigma)?))
}

fn power_from_shift(alpha_target: f64, shift: f64) -> f64 {
    normal_cdf(-normal_quantile(1.0 - alpha_target / 2.0) + shift)
}

/// Subjects per arm for power `1 - beta` at two-sided level `alpha`:
/// `ceil((var_ctrl + var_treat) (z_{1-alpha/2} + z_{1-beta})^2 / mu1^2)`.
pub fn sample_size(var_ctrl: f64, var_treat: f64, mu1: f64, alpha: f64, beta: f64) -> Result<u64> {
    if mu1 == 0.0 || !mu1.is_finite() {
        return Err(Error::invalid("mu1 must be finite and non-zero"));
    }
    if !(var_ctrl >= 0.0 && var_treat >= 0.0) || var_ctrl + var_treat == 0.0 {
        return Err(Error::invalid("variances must be >= 0 and not both 0"));
    }
    for (name, p) in [("alpha", alpha), ("beta", beta)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("{name} must be in (0, 1), got {p}")));
        }
    }
    let z = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(1.0 - beta);
    Ok(((var_ctrl + var_treat) * z * z / (mu1 * mu1)).ceil() as u64)
}

fn resample<R: Rng + ?Sized>(x: &TrajectoryMatrix, n: usize, rng: &mut R) -> TrajectoryMatrix {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..x.n_units())).collect();
    x.select_rows(&idx)
}

/// Resampled trial dataset: control group first, then treatment group, each
/// of `n_a` rows drawn with replacement.
pub fn resample_trial<R: Rng + ?Sized>(ds: &RctDataset, setting: TrialSetting, rng: &mut R) -> Result<RctDataset> {
    if ds.control.n_units() == 0 || ds.treatment.n_units() == 0 {
        return Err(Error::invalid("source arms must be non-empty"));
    }
    let ctrl = resample(&ds.control, setting.n_a, rng);
    let source = match setting.setting {
        Setting::Null => &ds.control,
        Setting::Alternative => &ds.treatment,
    };
    let treat = resample(source, setting.n_a, rng);
    Ok(ds.with_arms(ctrl, treat))
}

fn run_trial<R: Rng + ?Sized>(
    ds: &RctDataset,
    setting: TrialSetting,
    method: MethodChoice,
    cfg: &SecretsConfig,
    rng: &mut R,
) -> Result<TestOutcome> {
    let trial = resample_trial(ds, setting, rng)?;
    run_variant(&trial, method, cfg, rng)
}

/// One simulated trial of a single-trial method.
pub fn simulate_trial<R: Rng + ?Sized>(
    ds: &RctDataset,
    setting: TrialSetting,
    method: MethodChoice,
    cfg: &SecretsConfig,
    rng: &mut R,
) -> Result<TrialResult> {
    let out = run_trial(ds, setting, method, cfg, rng)?;
    Ok(TrialResult {
        reject: out.reject,
        ate_estimate: out.ate_estimate,
    })
}

/// `L` trials of one setting, in parallel, each on its own substream.
fn run_trials(
    ds: &RctDataset,
    setting: TrialSetting,
    method: MethodChoice,
    cfg: &SecretsConfig,
    l: usize,
    master: u64,
) -> Result<Vec<TestOutcome>> {
    (0..l)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng::substream(master, setting.setting.trial_label(), i as u64);
            run_trial(ds, setting, method, cfg, &mut stream)
        })
        .collect()
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn reject_rate(rejects: impl Iterator<Item = bool>, l: usize) -> f64 {
    rejects.filter(|r| *r).count() as f64 / l as f64
}

/// Target ATE for the error columns: the dataset's true ATE, or the Standard
/// estimate on the full dataset.
pub fn target_ate(ds: &RctDataset) -> Result<f64> {
    match ds.true_ate {
        Some(a) => Ok(a),
        None => ds.observed_ate(),
    }
}

/// Assemble a report from per-trial decisions and ATE estimates.
pub fn summarize(
    alt: &[TrialResult],
    null: &[TrialResult],
    alpha_target: f64,
    mu1_target: f64,
    n_a: usize,
) -> EvaluationReport {
    let l = alt.len();
    let ate1: Vec<f64> = alt.iter().map(|t| t.ate_estimate).collect();
    let ate0: Vec<f64> = null.iter().map(|t| t.ate_estimate).collect();
    let (mu1, mu0) = (mean(&ate1), mean(&ate0));
    let (sd1, sd0) = (sample_sd(&ate1), sample_sd(&ate0));
    let sigma = 0.5 * (sd0 + sd1);
    let shift = if sigma > 0.0 {
        (mu0 - mu1).abs() / sigma
    } else if mu0 == mu1 {
        0.0
    } else {
        f64::INFINITY
    };
    EvaluationReport {
        power: reject_rate(alt.iter().map(|t| t.reject), l),
        alpha: reject_rate(null.iter().map(|t| t.reject), null.len()),
        mu0_hat: mu0,
        mu1_hat: mu1,
        sigma_hat: sigma,
        sigma_hat_std: 0.5 * (sd0 - sd1).abs(),
        shift_term: shift,
        model_power: power_from_shift(alpha_target, shift),
        err_alt: mu1 - mu1_target,
        err_null: mu0,
        trials: l,
        n_a,
    }
}

fn results(outcomes: &[TestOutcome]) -> Vec<TrialResult> {
    outcomes
        .iter()
        .map(|o| TrialResult {
            reject: o.reject,
            ate_estimate: o.ate_estimate,
        })
        .collect()
}

fn check_trials(l: usize, min: usize) -> Result<()> {
    if l < min {
        return Err(Error::invalid(format!("number of trials L must be >= {min}, got {l}")));
    }
    Ok(())
}

/// Power, size and ATE-distribution summary of `method` over `L` trials per
/// setting. Harness-only methods dispatch to [`measure_tp`] and
/// [`measure_oracle`].
pub fn measure<R: Rng + ?Sized>(
    ds: &RctDataset,
    n_a: usize,
    method: MethodChoice,
    cfg: &SecretsConfig,
    l: usize,
    rng: &mut R,
) -> Result<EvaluationReport> {
    match method {
        MethodChoice::SecretsTP => return measure_tp(ds, n_a, cfg, l, rng),
        MethodChoice::SecretsO => return measure_oracle(ds, n_a, cfg, l, rng),
        _ => {}
    }
    check_trials(l, 1)?;
    if method != MethodChoice::Standard {
        cfg.validate()?;
    }
    let mu1_target = target_ate(ds)?;
    let master = rng::master_seed(rng);
    let alt = run_trials(ds, TrialSetting::alternative(n_a)?, method, cfg, l, master)?;
    let null = run_trials(ds, TrialSetting::null(n_a)?, method, cfg, l, master)?;
    Ok(summarize(&results(&alt), &results(&null), cfg.alpha(), mu1_target, n_a))
}

/// Shuffle the concatenation of `vectors` by `perm`, cut it back into
/// pieces of the original lengths, and t-test each piece.
pub fn permute_and_test(vectors: &[Vec<f64>], perm: &[usize], alpha: f64) -> Result<Vec<TestOutcome>> {
    let pool: Vec<f64> = vectors.concat();
    if perm.len() != pool.len() {
        return Err(Error::shape(format!(
            "permutation of {} for {} values",
            perm.len(),
            pool.len()
        )));
    }
    let shuffled: Vec<f64> = perm.iter().map(|&i| pool[i]).collect();
    let mut start = 0;
    vectors
        .iter()
        .map(|v| {
            let piece = &shuffled[start..start + v.len()];
            start += v.len();
            one_sample_t_test(piece, alpha)
        })
        .collect()
}

/// SECRETS-T-P: per setting, pool every trial's ITEs, shuffle, redistribute
/// into pseudo-trials of the original sizes and t-test each. ATE fields come
/// from the unshuffled trials.
pub fn measure_tp<R: Rng + ?Sized>(
    ds: &RctDataset,
    n_a: usize,
    cfg: &SecretsConfig,
    l: usize,
    rng: &mut R,
) -> Result<EvaluationReport> {
    check_trials(l, 2)?;
    let mu1_target = target_ate(ds)?;
    let master = rng::master_seed(rng);
    let mut per_setting = Vec::with_capacity(2);
    for setting in [Setting::Alternative, Setting::Null] {
        let outcomes = run_trials(
            ds,
            TrialSetting::new(setting, n_a)?,
            MethodChoice::SecretsT,
            cfg,
            l,
            master,
        )?;
        let vectors: Vec<Vec<f64>> = outcomes
            .iter()
            .map(|o| o.ites.as_ref().expect("SECRETS-T attaches ITEs").concat())
            .collect();
        let mut perm: Vec<usize> = (0..vectors.iter().map(Vec::len).sum()).collect();
        perm.shuffle(&mut rng::substream(master, setting.shuffle_label(), 0));
        let tested = permute_and_test(&vectors, &perm, cfg.alpha())?;
        let trials: Vec<TrialResult> = tested
            .iter()
            .zip(&outcomes)
            .map(|(t, o)| TrialResult {
                reject: t.reject,
                ate_estimate: o.ate_estimate,
            })
            .collect();
        per_setting.push(trials);
    }
    Ok(summarize(
        &per_setting[0],
        &per_setting[1],
        cfg.alpha(),
        mu1_target,
        n_a,
    ))
}

/// Empirical `(1 - alpha)` quantile of `|statistics|`: the
/// `ceil((1 - alpha) L)`-th smallest magnitude.
pub fn oracle_critical_value(statistics: &[f64], alpha: f64) -> f64 {
    let mut abs: Vec<f64> = statistics.iter().map(|s| s.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let k = ((1.0 - alpha) * abs.len() as f64).ceil() as usize;
    abs[k.clamp(1, abs.len()) - 1]
}

/// SECRETS-O: one critical value taken from the null trials' own
/// statistics, applied to every trial.
pub fn measure_oracle<R: Rng + ?Sized>(
    ds: &RctDataset,
    n_a: usize,
    cfg: &SecretsConfig,
    l: usize,
    rng: &mut R,
) -> Result<EvaluationReport> {
    check_trials(l, 2)?;
    let mu1_target = target_ate(ds)?;
    let master = rng::master_seed(rng);
    let alt = run_trials(
        ds,
        TrialSetting::alternative(n_a)?,
        MethodChoice::SecretsT,
        cfg,
        l,
        master,
    )?;
    let null = run_trials(ds, TrialSetting::null(n_a)?, MethodChoice::SecretsT, cfg, l, master)?;
    let null_stats: Vec<f64> = null.iter().map(|o| o.statistic).collect();
    let critical = oracle_critical_value(&null_stats, cfg.alpha());
    let decide = |outcomes: &[TestOutcome]| -> Vec<TrialResult> {
        outcomes
            .iter()
            .map(|o| TrialResult {
                reject: o.statistic.abs() > critical,
                ate_estimate: o.ate_estimate,
            })
            .collect()
    };
    Ok(summarize(&decide(&alt), &decide(&null), cfg.alpha(), mu1_target, n_a))
}

pub const CSV_HEADER: &str =
    "dataset,method,n_a,power,alpha,model_power,mu1_hat,mu0_hat,err_alt,err_null,sigma_hat,sigma_hat_std,shift_term";

/// One labelled report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: MethodChoice,
    pub report: EvaluationReport,
}

/// CSV with the fixed header, one line per row.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let e = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            csv_field(&r.dataset),
            r.method,
            e.n_a,
            e.power,
            e.alpha,
            e.model_power,
            e.mu1_hat,
            e.mu0_hat,
            e.err_alt,
            e.err_null,
            e.sigma_hat,
            e.sigma_hat_std,
            e.shift_term
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Aligned text table: rates in percent, spreads as `mean (std.)`.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = [
        "dataset",
        "method",
        "n_a",
        "power%",
        "alpha%",
        "model%",
        "mu1_hat",
        "mu0_hat",
        "|mu1-mu0|",
        "sigma_hat",
        "shift",
    ];
    let body: Vec<[String; 11]> = rows
        .iter()
        .map(|r| {
            let e = &r.report;
            [
                r.dataset.clone(),
                r.method.to_string(),
                e.n_a.to_string(),
                format!("{:.1}", 100.0 * e.power),
                format!("{:.1}", 100.0 * e.alpha),
                format!("{:.1}", 100.0 * e.model_power),
                format!("{:.3}", e.mu1_hat),
                format!("{:.3}", e.mu0_hat),
                format!("{:.3}", (e.mu1_hat - e.mu0_hat).abs()),
                format!("{:.3} ({:.3})", e.sigma_hat, e.sigma_hat_std),
                format!("{:.3}", e.shift_term),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in &body {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
