//! Virtual twins: one shared ridge model per arm mapping the baseline value
//! (plus an unpenalized intercept) to the post-intervention trajectory.

use rand::Rng;

use crate::data::{split_train_val, TrainValRatio, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::si::{r_squared, validate_grid};

#[derive(Debug, Clone, PartialEq)]
pub struct VtModel {
    /// Per post-intervention timepoint: `(slope, intercept)`.
    coefficients: Vec<(f64, f64)>,
    lambda_ridge: f64,
}

impl VtModel {
    pub fn new(coefficients: Vec<(f64, f64)>, lambda_ridge: f64) -> Self {
        Self {
            coefficients,
            lambda_ridge,
        }
    }

    /// Centered ridge fit: slopes shrink toward zero, intercepts are the
    /// post-period column means adjusted for the slope.
    pub fn fit(x: &TrajectoryMatrix, lambda_ridge: f64) -> Result<Self> {
        let n = x.n_units() as f64;
        let base = x.baseline();
        let base_mean = base.iter().sum::<f64>() / n;
        let sxx: f64 = base.iter().map(|b| (b - base_mean).powi(2)).sum();
        let denom = sxx + lambda_ridge;
        if denom <= 0.0 {
            return Err(Error::invalid(
                "virtual twins: constant baseline column with lambda = 0",
            ));
        }
        let coefficients = (1..x.n_t())
            .map(|t| {
                let y_mean = x.rows().map(|r| r[t]).sum::<f64>() / n;
                let sxy: f64 = x.rows().map(|r| (r[0] - base_mean) * (r[t] - y_mean)).sum();
                let slope = sxy / denom;
                (slope, y_mean - slope * base_mean)
            })
            .collect();
        Ok(Self {
            coefficients,
            lambda_ridge,
        })
    }

    pub fn coefficients(&self) -> &[(f64, f64)] {
        &self.coefficients
    }

    pub fn lambda_ridge(&self) -> f64 {
        self.lambda_ridge
    }

    pub fn n_t(&self) -> usize {
        self.coefficients.len() + 1
    }

    /// Baseline copied, post-intervention values from the shared model.
    pub fn predict(&self, x_unit: &[f64]) -> Vec<f64> {
        let b = x_unit[0];
        std::iter::once(b)
            .chain(self.coefficients.iter().map(|(s, c)| s * b + c))
            .collect()
    }

    pub fn predict_all(&self, x: &TrajectoryMatrix) -> TrajectoryMatrix {
        let data = x.rows().flat_map(|r| self.predict(r)).collect();
        TrajectoryMatrix::from_row_major(x.n_units(), x.n_t(), data).expect("prediction of finite data is finite")
    }
}

/// Choose `lambda` from `ridge_grid` by validation R^2 on a random split,
/// then refit on every row of the arm.
pub fn fit_vt<R: Rng + ?Sized>(
    x_arm: &TrajectoryMatrix,
    ridge_grid: &[f64],
    ratio: TrainValRatio,
    rng: &mut R,
) -> Result<VtModel> {
    validate_grid("ridge_grid", ridge_grid)?;
    let (train, val) = split_train_val(x_arm, ratio, rng)?;
    let mut best: Option<(f64, f64)> = None;
    let mut last_error = None;
    for &lambda in ridge_grid {
        let score =
            VtModel::fit(&train, lambda).and_then(|m| r_squared(val.as_slice(), m.predict_all(&val).as_slice()));
        match score {
            Ok(s) if best.is_none_or(|(b, _)| s > b) => best = Some((s, lambda)),
            Ok(_) => {}
            Err(e) => last_error = Some(e),
        }
    }
    let (_, lambda) = best.ok_or_else(|| {
        Error::TuningFailed(
            last_error
                .map(|e| e.to_string())
                .unwrap_or_else(|| "no finite score".into()),
        )
    })?;
    VtModel::fit(x_arm, lambda)
}

pub fn vt_predict(model: &VtModel, x_unit: &[f64]) -> Result<Vec<f64>> {
    if model.n_t() != x_unit.len() {
        return Err(Error::shape(format!(
            "model covers {} timepoints, unit has {}",
            model.n_t(),
            x_unit.len()
        )));
    }
    Ok(model.predict(x_unit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::si::logspace;
    use proptest::prelude::*;
    use rand::Rng;

    fn linear_arm(seed: u64, n: usize) -> TrajectoryMatrix {
        let mut r = rng::from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let b: f64 = r.random_range(-3.0..3.0);
                vec![b, 2.0 * b + 1.0, 2.0 * b + 1.0, -b + 4.0]
            })
            .collect();
        TrajectoryMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn recovers_exact_linear_model() {
        let x = linear_arm(3, 25);
        let mut grid = vec![1e-9];
        grid.extend(logspace(-3.0, 3.0, 7));
        let model = fit_vt(&x, &grid, TrainValRatio::default(), &mut rng::from_seed(4)).unwrap();
        assert!(grid.contains(&model.lambda_ridge()));
        assert_eq!(model.coefficients().len(), 3);
        for row in x.rows() {
            let p = vt_predict(&model, row).unwrap();
            for (a, b) in p.iter().zip(row) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn heavy_shrinkage_gives_column_means() {
        let x = linear_arm(8, 12);
        let model = VtModel::fit(&x, 1e12).unwrap();
        for (t, (slope, intercept)) in model.coefficients().iter().enumerate() {
            let mean = x.rows().map(|r| r[t + 1]).sum::<f64>() / 12.0;
            assert!(slope.abs() < 1e-9);
            assert!((intercept - mean).abs() < 1e-8);
        }
    }

    #[test]
    fn prediction_contract() {
        let zero = VtModel::new(vec![(0.0, 0.0); 2], 1.0);
        assert_eq!(vt_predict(&zero, &[5.0, 1.0, 2.0]).unwrap(), vec![5.0, 0.0, 0.0]);
        assert!(vt_predict(&zero, &[5.0, 1.0]).is_err());

        let constant = TrajectoryMatrix::from_rows(&[[1.0, 2.0], [1.0, 3.0]]).unwrap();
        assert!(VtModel::fit(&constant, 0.0).is_err());
        assert!(VtModel::fit(&constant, 0.5).is_ok());
    }

    proptest! {
        #[test]
        fn depends_only_on_baseline(seed in any::<u64>(), b in -5.0f64..5.0) {
            let x = linear_arm(seed, 10).map(|v| v + (v * 7.3).sin());
            let model = fit_vt(&x, &[0.01, 1.0], TrainValRatio::default(), &mut rng::from_seed(seed)).unwrap();
            let p = model.predict(&[b, 1.0, 2.0, 3.0]);
            let q = model.predict(&[b, -9.0, 0.0, 40.0]);
            prop_assert_eq!(p, q);
        }

        #[test]
        fn satisfies_normal_equations(seed in any::<u64>(), lambda in 0.0f64..50.0) {
            let mut r = rng::from_seed(seed);
            let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
            let x = TrajectoryMatrix::from_rows(&rows).unwrap();
            let model = VtModel::fit(&x, lambda).unwrap();
            // Penalized least squares with design [b, 1], penalty on the slope only:
            //   sum r = 0 and sum b r = lambda * slope, with r = y - slope b - c.
            for (t, &(slope, c)) in model.coefficients().iter().enumerate() {
                let (mut g0, mut g1, mut scale) = (0.0, 0.0, 1.0f64);
                for row in x.rows() {
                    let res = row[t + 1] - slope * row[0] - c;
                    g0 += res;
                    g1 += row[0] * res;
                    scale = scale.max((row[0] * row[t + 1]).abs());
                }
                prop_assert!(g0.abs() < 1e-10 * scale * 9.0);
                prop_assert!((g1 - lambda * slope).abs() < 1e-10 * scale * 9.0 * (1.0 + lambda));
            }
        }
    }
}
