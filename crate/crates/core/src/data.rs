//! Trial data model: per-arm trajectory matrices, outcome functions,
//! joint min-max normalization and train/validation splitting.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response matrix for one arm. Rows are subjects; column 0 is the
/// pre-intervention baseline and columns `1..n_t` are post-intervention visits.
///
/// Stored row-major so that each subject's trajectory is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix {
    data: Vec<f64>,
    n_units: usize,
    n_t: usize,
}

impl TrajectoryMatrix {
    /// Build from row-major values. Requires `n_units >= 1`, `n_t >= 2` and
    /// finite entries.
    pub fn from_row_major(n_units: usize, n_t: usize, data: Vec<f64>) -> Result<Self> {
        if n_t < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs at least 2 timepoints, got {n_t}"
            )));
        }
        if n_units == 0 {
            return Err(Error::invalid("trajectory matrix has no units"));
        }
        if data.len() != n_units * n_t {
            return Err(Error::shape(format!(
                "{} values for a {n_units}x{n_t} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at unit {}, timepoint {}",
                pos / n_t,
                pos % n_t + 1
            )));
        }
        Ok(Self { data, n_units, n_t })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_t = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * n_t);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_t {
                return Err(Error::shape(format!(
                    "row {i} has {} timepoints, expected {n_t}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), n_t, data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n_units, n_t) = m.shape();
        let mut data = Vec::with_capacity(n_units * n_t);
        for i in 0..n_units {
            data.extend(m.row(i).iter().copied());
        }
        Self::from_row_major(n_units, n_t, data)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_units, self.n_t, &self.data)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_t..(i + 1) * self.n_t]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_t)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, unit: usize, t: usize) -> f64 {
        self.data[unit * self.n_t + t]
    }

    /// Baseline (t = 1) values of every unit.
    pub fn baseline(&self) -> Vec<f64> {
        self.rows().map(|r| r[0]).collect()
    }

    /// New matrix made of the given rows, in the given order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> TrajectoryMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_t);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        TrajectoryMatrix {
            data,
            n_units: indices.len(),
            n_t: self.n_t,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TrajectoryMatrix {
        TrajectoryMatrix {
            data: self.data.iter().map(|&v| f(v)).collect(),
            n_units: self.n_units,
            n_t: self.n_t,
        }
    }

    fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// How a subject's trajectory is reduced to a scalar health outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSpec {
    /// Value at `timepoint` (0-based column, default: final) minus the baseline.
    ChangeFromBaseline { timepoint: Option<usize> },
    /// Value at the final timepoint.
    EndpointValue,
    /// Trapezoid-weighted mean of the post-intervention values over the visit times.
    TimeWeightedAverage,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec::ChangeFromBaseline { timepoint: None }
    }
}

impl fmt::Display for OutcomeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeSpec::ChangeFromBaseline { timepoint: None } => f.write_str("change_from_baseline"),
            OutcomeSpec::ChangeFromBaseline { timepoint: Some(t) } => {
                write!(f, "change_from_baseline@t{}", t + 1)
            }
            OutcomeSpec::EndpointValue => f.write_str("endpoint"),
            OutcomeSpec::TimeWeightedAverage => f.write_str("time_weighted_average"),
        }
    }
}

impl FromStr for OutcomeSpec {
    type Err = Error;

    /// Accepts `change_from_baseline`, `change_from_baseline@tK` (1-based visit),
    /// `endpoint` and `time_weighted_average`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "change_from_baseline" | "change" => return Ok(OutcomeSpec::ChangeFromBaseline { timepoint: None }),
            "endpoint" | "endpoint_value" => return Ok(OutcomeSpec::EndpointValue),
            "time_weighted_average" | "twa" => return Ok(OutcomeSpec::TimeWeightedAverage),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("change_from_baseline@t") {
            let k: usize = rest
                .parse()
                .map_err(|_| Error::invalid(format!("bad outcome timepoint in {s:?}")))?;
            if k < 2 {
                return Err(Error::invalid(format!(
                    "change outcome must use a post-intervention visit (t2 or later), got t{k}"
                )));
            }
            return Ok(OutcomeSpec::ChangeFromBaseline { timepoint: Some(k - 1) });
        }
        Err(Error::invalid(format!("unknown outcome {s:?}")))
    }
}

/// Scalar outcome of one trajectory.
pub fn compute_outcome(trajectory: &[f64], spec: OutcomeSpec, visit_times: Option<&[f64]>) -> Result<f64> {
    let n_t = trajectory.len();
    if n_t < 2 {
        return Err(Error::invalid(format!(
            "outcome needs at least 2 timepoints, got {n_t}"
        )));
    }
    match spec {
        OutcomeSpec::ChangeFromBaseline { timepoint } => {
            let t = timepoint.unwrap_or(n_t - 1);
            if t == 0 || t >= n_t {
                return Err(Error::invalid(format!(
                    "change timepoint t{} outside post-intervention range t2..t{n_t}",
                    t + 1
                )));
            }
            Ok(trajectory[t] - trajectory[0])
        }
        OutcomeSpec::EndpointValue => Ok(trajectory[n_t - 1]),
        OutcomeSpec::TimeWeightedAverage => {
            let times =
                visit_times.ok_or_else(|| Error::invalid("time-weighted average outcome requires visit times"))?;
            if times.len() != n_t {
                return Err(Error::shape(format!(
                    "{} visit times for {n_t} timepoints",
                    times.len()
                )));
            }
            Ok(time_weighted_average(&trajectory[1..], &times[1..]))
        }
    }
}

fn time_weighted_average(values: &[f64], times: &[f64]) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let area: f64 = values
        .windows(2)
        .zip(times.windows(2))
        .map(|(v, t)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum();
    area / (times[times.len() - 1] - times[0])
}

/// An outcome specification bound to the study's visit schedule, validated
/// once so that evaluation cannot fail.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    spec: OutcomeSpec,
    visit_times: Option<Vec<f64>>,
    n_t: usize,
}

impl Outcome {
    pub fn new(spec: OutcomeSpec, visit_times: Option<Vec<f64>>, n_t: usize) -> Result<Self> {
        if let Some(times) = &visit_times {
            validate_visit_times(times, n_t)?;
        }
        // Probe with a zero trajectory to surface configuration errors now.
        compute_outcome(&vec![0.0; n_t], spec, visit_times.as_deref())?;
        Ok(Self { spec, visit_times, n_t })
    }

    pub fn spec(&self) -> OutcomeSpec {
        self.spec
    }

    pub fn visit_times(&self) -> Option<&[f64]> {
        self.visit_times.as_deref()
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn evaluate(&self, trajectory: &[f64]) -> f64 {
        debug_assert_eq!(trajectory.len(), self.n_t);
        compute_outcome(trajectory, self.spec, self.visit_times.as_deref()).expect("outcome validated at construction")
    }

    pub fn evaluate_rows(&self, x: &TrajectoryMatrix) -> Vec<f64> {
        x.rows().map(|r| self.evaluate(r)).collect()
    }
}

fn validate_visit_times(times: &[f64], n_t: usize) -> Result<()> {
    if times.len() != n_t {
        return Err(Error::shape(format!(
            "{} visit times for {n_t} timepoints",
            times.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("visit times must be finite and strictly increasing"));
    }
    Ok(())
}

/// A two-arm trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RctDataset {
    pub control: TrajectoryMatrix,
    pub treatment: TrajectoryMatrix,
    pub outcome: OutcomeSpec,
    pub visit_times: Option<Vec<f64>>,
    pub true_ate: Option<f64>,
}

impl RctDataset {
    pub fn new(
        control: TrajectoryMatrix,
        treatment: TrajectoryMatrix,
        outcome: OutcomeSpec,
        visit_times: Option<Vec<f64>>,
        true_ate: Option<f64>,
    ) -> Result<Self> {
        if control.n_t() != treatment.n_t() {
            return Err(Error::shape(format!(
                "control has {} timepoints, treatment has {}",
                control.n_t(),
                treatment.n_t()
            )));
        }
        let ds = Self {
            control,
            treatment,
            outcome,
            visit_times,
            true_ate,
        };
        ds.outcome_fn()?;
        Ok(ds)
    }

    pub fn n_t(&self) -> usize {
        self.control.n_t()
    }

    pub fn outcome_fn(&self) -> Result<Outcome> {
        Outcome::new(self.outcome, self.visit_times.clone(), self.n_t())
    }

    /// Same outcome definition and visit schedule, different arms.
    pub fn with_arms(&self, control: TrajectoryMatrix, treatment: TrajectoryMatrix) -> Self {
        Self {
            control,
            treatment,
            outcome: self.outcome,
            visit_times: self.visit_times.clone(),
            true_ate: None,
        }
    }

    /// Difference of arm outcome means on the full dataset.
    pub fn observed_ate(&self) -> Result<f64> {
        let outcome = self.outcome_fn()?;
        Ok(mean(&outcome.evaluate_rows(&self.treatment)) - mean(&outcome.evaluate_rows(&self.control)))
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scalar affine map behind min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min_val: f64,
    pub max_val: f64,
}

impl NormalizationParams {
    /// `max == min`: both directions are the identity.
    pub fn is_degenerate(&self) -> bool {
        self.max_val == self.min_val
    }

    pub fn forward(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            x
        } else {
            (x - self.min_val) / (self.max_val - self.min_val)
        }
    }

    pub fn inverse(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            x
        } else {
            x * (self.max_val - self.min_val) + self.min_val
        }
    }
}

/// Normalize all matrices with one global min and max taken over every entry.
pub fn minmax_normalize(matrices: &[&TrajectoryMatrix]) -> Result<(Vec<TrajectoryMatrix>, NormalizationParams)> {
    if matrices.is_empty() {
        return Err(Error::invalid("nothing to normalize"));
    }
    let (min_val, max_val) = matrices
        .iter()
        .map(|m| m.min_max())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        });
    let params = NormalizationParams { min_val, max_val };
    let out = matrices.iter().map(|m| m.map(|v| params.forward(v))).collect();
    Ok((out, params))
}

pub fn unnormalize(matrix: &TrajectoryMatrix, params: &NormalizationParams) -> TrajectoryMatrix {
    matrix.map(|v| params.inverse(v))
}

/// Ratio of training to validation set size, e.g. 7/3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainValRatio {
    pub train: u32,
    pub val: u32,
}

impl TrainValRatio {
    pub fn new(train: u32, val: u32) -> Result<Self> {
        if train == 0 || val == 0 {
            return Err(Error::invalid(format!(
                "train/val ratio must be positive, got {train}/{val}"
            )));
        }
        Ok(Self { train, val })
    }

    /// Training rows for `n` units: round-half-up of `n * r / (r + 1)`,
    /// clamped so both parts keep at least one row.
    pub fn train_size(&self, n: usize) -> usize {
        let total = (self.train + self.val) as u128;
        let num = 2 * n as u128 * self.train as u128 + total;
        let rounded = (num / (2 * total)) as usize;
        rounded.clamp(1, n.saturating_sub(1).max(1))
    }
}

impl Default for TrainValRatio {
    fn default() -> Self {
        Self { train: 7, val: 3 }
    }
}

impl fmt::Display for TrainValRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.train, self.val)
    }
}

impl FromStr for TrainValRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("ratio {s:?} is not of the form a/b")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("bad ratio {s:?}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// Random partition of the rows of `x` into training and validation sets.
pub fn split_train_val<R: Rng + ?Sized>(
    x: &TrajectoryMatrix,
    ratio: TrainValRatio,
    rng: &mut R,
) -> Result<(TrajectoryMatrix, TrajectoryMatrix)> {
    let n = x.n_units();
    if n < 2 {
        return Err(Error::invalid(format!(
            "cannot split {n} unit(s) into training and validation sets"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ratio.train_size(n);
    Ok((x.select_rows(&idx[..n_train]), x.select_rows(&idx[n_train..])))
}
