//! Individual treatment effect estimation.
//!
//! For an unexposed arm and a target arm: normalize both jointly, fit a
//! counterfactual model on the (normalized) target arm, impute every
//! unexposed unit's trajectory under the target intervention, map back to
//! the original scale, and difference the outcomes. Entries are always
//! reported as outcome-under-treatment minus outcome-under-control.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{minmax_normalize, unnormalize, Outcome, TrainValRatio, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::si::{tune_si_hyperparams, SiHyperparams, SiModel, SiTuningParams};
use crate::vt::{fit_vt, VtModel};

/// Counterfactual estimator plugged into [`estimate_ites`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EstimatorChoice {
    /// SI, hyperparameters tuned on the target arm at every call.
    SyntheticIntervention(SiTuningParams),
    /// SI with pinned hyperparameters. Used when tuning results are cached.
    FixedSi(SiHyperparams),
    /// Shared per-arm ridge models on the baseline value.
    VirtualTwins { ridge_grid: Vec<f64>, ratio: TrainValRatio },
}

impl Default for EstimatorChoice {
    fn default() -> Self {
        EstimatorChoice::SyntheticIntervention(SiTuningParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treatment,
}

/// Estimated ITEs for the subjects of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteVector {
    pub values: Vec<f64>,
    pub arm: Arm,
}

/// ITEs of both arms, control subjects first when concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedItes {
    pub control: IteVector,
    pub treatment: IteVector,
}

impl MergedItes {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.control.values);
        v.extend_from_slice(&self.treatment.values);
        v
    }

    pub fn len(&self) -> usize {
        self.control.values.len() + self.treatment.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The ATE estimate.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.control.values.iter().chain(&self.treatment.values).sum();
        sum / self.len() as f64
    }
}

enum Fitted {
    Si(SiModel),
    Vt(VtModel),
}

impl Fitted {
    fn predict_all(&self, x: &TrajectoryMatrix) -> TrajectoryMatrix {
        match self {
            Fitted::Si(m) => m.predict_all(x),
            Fitted::Vt(m) => m.predict_all(x),
        }
    }
}

fn fit_estimator<R: Rng + ?Sized>(
    target: &TrajectoryMatrix,
    estimator: &EstimatorChoice,
    rng: &mut R,
) -> Result<Fitted> {
    Ok(match estimator {
        EstimatorChoice::SyntheticIntervention(params) => {
            let hp = tune_si_hyperparams(target, params, rng)?;
            Fitted::Si(SiModel::fit(hp, target)?)
        }
        EstimatorChoice::FixedSi(hp) => Fitted::Si(SiModel::fit(*hp, target)?),
        EstimatorChoice::VirtualTwins { ridge_grid, ratio } => Fitted::Vt(fit_vt(target, ridge_grid, *ratio, rng)?),
    })
}

/// ITEs of the unexposed arm's subjects, with `x_target` as the donor arm.
/// The returned SI hyperparameters (when SI was used) allow callers to cache
/// the tuning result.
pub fn estimate_ites_with_model<R: Rng + ?Sized>(
    x_unexposed: &TrajectoryMatrix,
    x_target: &TrajectoryMatrix,
    estimator: &EstimatorChoice,
    outcome: &Outcome,
    target_is_treatment: bool,
    rng: &mut R,
) -> Result<(IteVector, Option<SiHyperparams>)> {
    if x_unexposed.n_t() != x_target.n_t() || x_target.n_t() != outcome.n_t() {
        return Err(Error::shape(format!(
            "unexposed arm has {} timepoints, target arm {}, outcome expects {}",
            x_unexposed.n_t(),
            x_target.n_t(),
            outcome.n_t()
        )));
    }
    let (normalized, params) = minmax_normalize(&[x_unexposed, x_target])?;
    let fitted = fit_estimator(&normalized[1], estimator, rng)?;
    let counterfactual = unnormalize(&fitted.predict_all(&normalized[0]), &params);

    let sign = if target_is_treatment { 1.0 } else { -1.0 };
    let values = counterfactual
        .rows()
        .zip(x_unexposed.rows())
        .map(|(cf, obs)| sign * (outcome.evaluate(cf) - outcome.evaluate(obs)))
        .collect();
    let arm = if target_is_treatment {
        Arm::Control
    } else {
        Arm::Treatment
    };
    let hp = match fitted {
        Fitted::Si(m) => Some(m.hyperparams()),
        Fitted::Vt(_) => None,
    };
    Ok((IteVector { values, arm }, hp))
}

pub fn estimate_ites<R: Rng + ?Sized>(
    x_unexposed: &TrajectoryMatrix,
    x_target: &TrajectoryMatrix,
    estimator: &EstimatorChoice,
    outcome: &Outcome,
    target_is_treatment: bool,
    rng: &mut R,
) -> Result<IteVector> {
    estimate_ites_with_model(x_unexposed, x_target, estimator, outcome, target_is_treatment, rng).map(|(ites, _)| ites)
}

/// ITEs for both arms: control subjects imputed from treatment donors, then
/// treatment subjects imputed from control donors.
pub fn merged_ites<R: Rng + ?Sized>(
    x_ctrl: &TrajectoryMatrix,
    x_treat: &TrajectoryMatrix,
    estimator: &EstimatorChoice,
    outcome: &Outcome,
    rng: &mut R,
) -> Result<MergedItes> {
    merged_ites_with_models(x_ctrl, x_treat, estimator, outcome, rng).map(|(m, _)| m)
}

/// As [`merged_ites`], also returning the SI hyperparameters tuned on the
/// control arm (the donors for treatment subjects), if any.
pub(crate) fn merged_ites_with_models<R: Rng + ?Sized>(
    x_ctrl: &TrajectoryMatrix,
    x_treat: &TrajectoryMatrix,
    estimator: &EstimatorChoice,
    outcome: &Outcome,
    rng: &mut R,
) -> Result<(MergedItes, Option<SiHyperparams>)> {
    let (control, _) = estimate_ites_with_model(x_ctrl, x_treat, estimator, outcome, true, rng)?;
    let (treatment, ctrl_hp) = estimate_ites_with_model(x_treat, x_ctrl, estimator, outcome, false, rng)?;
    Ok((MergedItes { control, treatment }, ctrl_hp))
}
