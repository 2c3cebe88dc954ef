//! Synthetic intervention (SI) counterfactual estimator.
//!
//! A target unit's post-intervention trajectory under the donors' intervention
//! is predicted as a weighted combination of donor trajectories. The donor
//! matrix is first denoised by singular value thresholding; the weights come
//! from a ridge fit of the target's baseline on the donors' (denoised)
//! baselines.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_train_val, TrainValRatio, TrajectoryMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiHyperparams {
    /// Ridge regularization strength.
    pub lambda_ridge: f64,
    /// Singular values below this are dropped.
    pub lambda_svt: f64,
}

impl SiHyperparams {
    pub fn new(lambda_ridge: f64, lambda_svt: f64) -> Result<Self> {
        for (name, v) in [("lambda_ridge", lambda_ridge), ("lambda_svt", lambda_svt)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            lambda_ridge,
            lambda_svt,
        })
    }
}

/// Grid-search settings for [`tune_si_hyperparams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiTuningParams {
    pub ratio_train_val: TrainValRatio,
    pub ridge_grid: Vec<f64>,
    pub svt_grid: Vec<f64>,
}

impl Default for SiTuningParams {
    fn default() -> Self {
        Self {
            ratio_train_val: TrainValRatio::default(),
            ridge_grid: logspace(-3.0, 3.0, 7),
            svt_grid: linspace(0.1, 1.0, 10),
        }
    }
}

impl SiTuningParams {
    pub fn validate(&self) -> Result<()> {
        validate_grid("ridge_grid", &self.ridge_grid)?;
        validate_grid("svt_grid", &self.svt_grid)
    }
}

pub(crate) fn validate_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!(
            "{name} entry {v} is not a finite nonnegative value"
        )));
    }
    Ok(())
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

/// `n` values `10^e` for exponents evenly spaced over `[start, stop]`.
pub fn logspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    linspace(start, stop, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

/// Thin SVD kept around so several thresholds can be applied cheaply.
struct Decomposition {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v_t: DMatrix<f64>,
}

impl Decomposition {
    fn new(x: &DMatrix<f64>) -> Self {
        let (m, n) = x.shape();
        let mat = faer::Mat::from_fn(m, n, |i, j| x[(i, j)]);
        let svd = mat.thin_svd().expect("SVD converges on finite input");
        let k = m.min(n);
        let (u, s, v) = (svd.U(), svd.S(), svd.V());
        Self {
            u: DMatrix::from_fn(m, k, |i, j| u[(i, j)]),
            s: DVector::from_fn(k, |i, _| s[i]),
            v_t: DMatrix::from_fn(k, n, |i, j| v[(j, i)]),
        }
    }

    fn truncated(&self, lambda_svt: f64) -> DMatrix<f64> {
        let (m, n) = (self.u.nrows(), self.v_t.ncols());
        let mut out = DMatrix::zeros(m, n);
        for (i, &s) in self.s.iter().enumerate() {
            if s >= lambda_svt && s > 0.0 {
                out += (self.u.column(i) * s) * self.v_t.row(i);
            }
        }
        out
    }
}

/// Keep the singular components with `s_i >= lambda_svt`.
pub fn truncate_svd(x: &DMatrix<f64>, lambda_svt: f64) -> DMatrix<f64> {
    Decomposition::new(x).truncated(lambda_svt)
}

/// Ridge weights for a single scalar target:
/// `argmin_w (y - w·a)^2 + lambda |w|^2 = a y / (lambda + |a|^2)`.
pub fn fit_donor_weights(donor_baseline: &[f64], target_baseline: f64, lambda_ridge: f64) -> Result<Vec<f64>> {
    if donor_baseline.is_empty() {
        return Err(Error::invalid("no donors"));
    }
    let scale = ridge_scale(donor_baseline.iter().map(|a| a * a).sum(), lambda_ridge)?;
    Ok(donor_baseline.iter().map(|a| a * target_baseline * scale).collect())
}

fn ridge_scale(norm_sq: f64, lambda_ridge: f64) -> Result<f64> {
    let denom = lambda_ridge + norm_sq;
    if denom <= 0.0 {
        return Err(Error::DegenerateDonors);
    }
    Ok(1.0 / denom)
}

/// Literal per-unit SI: denoise donors, fit weights on the baseline, predict
/// the post-intervention values. The baseline is copied from the unit.
pub fn si_predict(hp: SiHyperparams, donors: &TrajectoryMatrix, x_unit: &[f64]) -> Result<Vec<f64>> {
    if donors.n_t() != x_unit.len() {
        return Err(Error::shape(format!(
            "donors have {} timepoints, unit has {}",
            donors.n_t(),
            x_unit.len()
        )));
    }
    let trunc = truncate_svd(&donors.to_dmatrix(), hp.lambda_svt);
    let a: Vec<f64> = trunc.column(0).iter().copied().collect();
    let w = fit_donor_weights(&a, x_unit[0], hp.lambda_ridge)?;
    let w = DVector::from_vec(w);
    let mut out = Vec::with_capacity(x_unit.len());
    out.push(x_unit[0]);
    for t in 1..donors.n_t() {
        out.push(w.dot(&trunc.column(t)));
    }
    Ok(out)
}

/// SI fitted to one donor pool. With a single baseline column the weights
/// are `a y / (lambda + |a|^2)`, so every unit's prediction is its baseline
/// times one fixed post-period profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SiModel {
    hp: SiHyperparams,
    profile: Vec<f64>,
}

impl SiModel {
    pub fn fit(hp: SiHyperparams, donors: &TrajectoryMatrix) -> Result<Self> {
        let trunc = truncate_svd(&donors.to_dmatrix(), hp.lambda_svt);
        Self::from_truncated(hp, &trunc)
    }

    fn from_truncated(hp: SiHyperparams, trunc: &DMatrix<f64>) -> Result<Self> {
        let a = trunc.column(0);
        let scale = ridge_scale(a.norm_squared(), hp.lambda_ridge)?;
        let profile = (1..trunc.ncols()).map(|t| a.dot(&trunc.column(t)) * scale).collect();
        Ok(Self { hp, profile })
    }

    pub fn hyperparams(&self) -> SiHyperparams {
        self.hp
    }

    pub fn n_t(&self) -> usize {
        self.profile.len() + 1
    }

    pub fn predict(&self, x_unit: &[f64]) -> Vec<f64> {
        let y = x_unit[0];
        std::iter::once(y).chain(self.profile.iter().map(|p| y * p)).collect()
    }

    pub fn predict_all(&self, x: &TrajectoryMatrix) -> TrajectoryMatrix {
        let data = x.rows().flat_map(|r| self.predict(r)).collect();
        TrajectoryMatrix::from_row_major(x.n_units(), x.n_t(), data).expect("prediction of finite data is finite")
    }
}

/// `1 - SSE/SST` over all entries, SST about the grand mean of `y_true`.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::shape(format!(
            "R^2 of {} vs {} values",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let sst: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::ConstantReference);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Grid search over `ridge_grid x svt_grid` (ridge outer, svt inner), scoring
/// each pair by validation R^2 of SI predictions with the training rows as
/// donors. Ties keep the earliest pair.
pub fn tune_si_hyperparams<R: Rng + ?Sized>(
    x: &TrajectoryMatrix,
    params: &SiTuningParams,
    rng: &mut R,
) -> Result<SiHyperparams> {
    params.validate()?;
    let (train, val) = split_train_val(x, params.ratio_train_val, rng)?;
    let decomposition = Decomposition::new(&train.to_dmatrix());
    let truncated: Vec<DMatrix<f64>> = params.svt_grid.iter().map(|&l| decomposition.truncated(l)).collect();

    let mut best: Option<(f64, SiHyperparams)> = None;
    let mut last_error = None;
    for &lambda_ridge in &params.ridge_grid {
        for (&lambda_svt, trunc) in params.svt_grid.iter().zip(&truncated) {
            let hp = SiHyperparams {
                lambda_ridge,
                lambda_svt,
            };
            let score = SiModel::from_truncated(hp, trunc)
                .and_then(|model| r_squared(val.as_slice(), model.predict_all(&val).as_slice()));
            match score {
                Ok(s) if best.is_none_or(|(b, _)| s > b) => best = Some((s, hp)),
                Ok(_) => {}
                Err(e) => last_error = Some(e),
            }
        }
    }
    best.map(|(_, hp)| hp).ok_or_else(|| {
        Error::TuningFailed(
            last_error
                .map(|e| e.to_string())
                .unwrap_or_else(|| "no finite score".into()),
        )
    })
}
