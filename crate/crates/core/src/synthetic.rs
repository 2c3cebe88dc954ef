//! Synthetic trials with known ground truth.
//!
//! Unit `i` has latent factors `u_i` drawn uniformly from a positive range;
//! its trajectory under arm `a` is `u_i^T V_a` plus Gaussian noise. The noise
//! draw is shared by a unit's two potential trajectories, so per-unit effects
//! are noise-free.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{mean, Outcome, OutcomeSpec, RctDataset, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::io::{join_reals, parse_reals, read_key_values, save_dataset, sidecar_path};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_ctrl: usize,
    pub n_treat: usize,
    pub n_t: usize,
    pub rank: usize,
    pub unit_factor_range: (f64, f64),
    /// `rank` rows of `n_t` values each.
    pub time_factors_ctrl: Vec<Vec<f64>>,
    pub time_factors_treat: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub outcome: OutcomeSpec,
    pub visit_times: Option<Vec<f64>>,
}

/// Both potential trajectories of every unit, control-arm units first.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub under_control: TrajectoryMatrix,
    pub under_treatment: TrajectoryMatrix,
}

impl SyntheticSpec {
    /// Rank-1 design whose treatment factor adds `delta` at every post visit.
    pub fn rank_one(n_ctrl: usize, n_treat: usize, v_ctrl: Vec<f64>, delta: f64, noise_sd: f64) -> Self {
        let v_treat = shifted(&v_ctrl, delta);
        Self {
            n_ctrl,
            n_treat,
            n_t: v_ctrl.len(),
            rank: 1,
            unit_factor_range: (0.5, 1.5),
            time_factors_ctrl: vec![v_ctrl],
            time_factors_treat: vec![v_treat],
            noise_sd,
            outcome: OutcomeSpec::default(),
            visit_times: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::invalid(format!("{name}: {msg}")));
        if self.n_ctrl < 1 {
            return field("n_ctrl", "must be >= 1");
        }
        if self.n_treat < 1 {
            return field("n_treat", "must be >= 1");
        }
        if self.n_t < 2 {
            return field("n_t", "must be >= 2");
        }
        if self.rank < 1 {
            return field("rank", "must be >= 1");
        }
        let (lo, hi) = self.unit_factor_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return field("unit_factor_range", "must be a finite interval lo,hi with lo <= hi");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return field("noise_sd", "must be finite and >= 0");
        }
        for (name, v) in [
            ("time_factors_ctrl", &self.time_factors_ctrl),
            ("time_factors_treat", &self.time_factors_treat),
        ] {
            if v.len() != self.rank || v.iter().any(|row| row.len() != self.n_t) {
                return field(name, &format!("must be {} rows of {} values", self.rank, self.n_t));
            }
            if v.iter().flatten().any(|x| !x.is_finite()) {
                return field(name, "must be finite");
            }
        }
        let same_baseline = self
            .time_factors_ctrl
            .iter()
            .zip(&self.time_factors_treat)
            .all(|(c, t)| c[0] == t[0]);
        if !same_baseline {
            return field("time_factors_treat", "first column must equal the control factors'");
        }
        Outcome::new(self.outcome, self.visit_times.clone(), self.n_t)?;
        Ok(())
    }

    /// Expected outcome difference: every outcome is linear in the
    /// trajectory, so it is the outcome of `E[u]^T (V_treat - V_ctrl)`.
    pub fn true_ate(&self) -> Result<f64> {
        let outcome = Outcome::new(self.outcome, self.visit_times.clone(), self.n_t)?;
        let m = 0.5 * (self.unit_factor_range.0 + self.unit_factor_range.1);
        let diff: Vec<f64> = (0..self.n_t)
            .map(|t| {
                self.time_factors_ctrl
                    .iter()
                    .zip(&self.time_factors_treat)
                    .map(|(c, tr)| m * (tr[t] - c[t]))
                    .sum()
            })
            .collect();
        Ok(outcome.evaluate(&diff))
    }

    /// Parse a `key=value` spec. `time_factors_*` hold `;`-separated rows of
    /// `,`-separated values; `effect=d` may replace `time_factors_treat` with
    /// the control factors shifted by `d` after the baseline.
    pub fn from_key_values(kv: &BTreeMap<String, String>) -> Result<Self> {
        const KNOWN: [&str; 11] = [
            "n_ctrl",
            "n_treat",
            "n_t",
            "rank",
            "unit_factor_range",
            "time_factors_ctrl",
            "time_factors_treat",
            "effect",
            "noise_sd",
            "outcome",
            "visit_times",
        ];
        if let Some(k) = kv.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::invalid(format!("unknown spec key {k:?}")));
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::invalid(format!("{k}: missing")));
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid(format!("{k}: expected a non-negative integer")))
        };
        let real = |k: &str, v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::invalid(format!("{k}: bad number {v:?}")))
        };
        let ctrl = parse_matrix(get("time_factors_ctrl")?)?;
        let rank = match kv.get("rank") {
            Some(_) => count("rank")?,
            None => ctrl.len(),
        };
        let n_t = match kv.get("n_t") {
            Some(_) => count("n_t")?,
            None => ctrl.first().map_or(0, Vec::len),
        };
        let treat = match (kv.get("time_factors_treat"), kv.get("effect")) {
            (Some(_), Some(_)) => return Err(Error::invalid("time_factors_treat and effect are mutually exclusive")),
            (Some(v), None) => parse_matrix(v)?,
            (None, Some(d)) => {
                let d = real("effect", d)?;
                ctrl.iter().map(|row| shifted(row, d)).collect()
            }
            (None, None) => return Err(Error::invalid("time_factors_treat: missing (or give effect)")),
        };
        let unit_factor_range = match kv.get("unit_factor_range") {
            Some(v) => match parse_reals(v)?.as_slice() {
                [lo, hi] => (*lo, *hi),
                _ => return Err(Error::invalid("unit_factor_range: expected lo,hi")),
            },
            None => (0.5, 1.5),
        };
        let spec = Self {
            n_ctrl: count("n_ctrl")?,
            n_treat: count("n_treat")?,
            n_t,
            rank,
            unit_factor_range,
            time_factors_ctrl: ctrl,
            time_factors_treat: treat,
            noise_sd: kv.get("noise_sd").map_or(Ok(0.0), |v| real("noise_sd", v))?,
            outcome: kv.get("outcome").map_or(Ok(OutcomeSpec::default()), |v| v.parse())?,
            visit_times: kv.get("visit_times").map(|v| parse_reals(v)).transpose()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&read_key_values(path)?)
    }

    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let matrix = |m: &[Vec<f64>]| m.iter().map(|r| join_reals(r)).collect::<Vec<_>>().join(";");
        let mut kv = BTreeMap::new();
        kv.insert("n_ctrl".into(), self.n_ctrl.to_string());
        kv.insert("n_treat".into(), self.n_treat.to_string());
        kv.insert("n_t".into(), self.n_t.to_string());
        kv.insert("rank".into(), self.rank.to_string());
        kv.insert(
            "unit_factor_range".into(),
            join_reals(&[self.unit_factor_range.0, self.unit_factor_range.1]),
        );
        kv.insert("time_factors_ctrl".into(), matrix(&self.time_factors_ctrl));
        kv.insert("time_factors_treat".into(), matrix(&self.time_factors_treat));
        kv.insert("noise_sd".into(), self.noise_sd.to_string());
        kv.insert("outcome".into(), self.outcome.to_string());
        if let Some(t) = &self.visit_times {
            kv.insert("visit_times".into(), join_reals(t));
        }
        kv
    }
}

fn shifted(v: &[f64], delta: f64) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(t, x)| if t == 0 { *x } else { x + delta })
        .collect()
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';').map(parse_reals).collect()
}

/// Draw a dataset and both potential trajectories of every unit.
pub fn generate<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<(RctDataset, PotentialOutcomes)> {
    spec.validate()?;
    let (lo, hi) = spec.unit_factor_range;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::invalid(format!("noise_sd: {e}")))?;
    let n = spec.n_ctrl + spec.n_treat;
    let mut under_ctrl = Vec::with_capacity(n * spec.n_t);
    let mut under_treat = Vec::with_capacity(n * spec.n_t);
    for _ in 0..n {
        let u: Vec<f64> = (0..spec.rank)
            .map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo })
            .collect();
        for t in 0..spec.n_t {
            let e = noise.sample(rng);
            let dot = |v: &[Vec<f64>]| u.iter().zip(v).map(|(uk, row)| uk * row[t]).sum::<f64>();
            under_ctrl.push(dot(&spec.time_factors_ctrl) + e);
            under_treat.push(dot(&spec.time_factors_treat) + e);
        }
    }
    let under_control = TrajectoryMatrix::from_row_major(n, spec.n_t, under_ctrl)?;
    let under_treatment = TrajectoryMatrix::from_row_major(n, spec.n_t, under_treat)?;
    let ctrl_rows: Vec<usize> = (0..spec.n_ctrl).collect();
    let treat_rows: Vec<usize> = (spec.n_ctrl..n).collect();
    let ds = RctDataset::new(
        under_control.select_rows(&ctrl_rows),
        under_treatment.select_rows(&treat_rows),
        spec.outcome,
        spec.visit_times.clone(),
        Some(spec.true_ate()?),
    )?;
    Ok((
        ds,
        PotentialOutcomes {
            under_control,
            under_treatment,
        },
    ))
}

/// Per-unit true effects, control-arm units first.
pub fn true_effects(ds: &RctDataset, potential: &PotentialOutcomes) -> Result<Vec<f64>> {
    let outcome = ds.outcome_fn()?;
    Ok(potential
        .under_treatment
        .rows()
        .zip(potential.under_control.rows())
        .map(|(t, c)| outcome.evaluate(t) - outcome.evaluate(c))
        .collect())
}

/// Save a generated dataset; the sidecar also records the spec under
/// `spec.`-prefixed keys.
pub fn save_synthetic(ds: &RctDataset, spec: &SyntheticSpec, path: &Path) -> Result<()> {
    save_dataset(ds, path)?;
    let meta_path = sidecar_path(path);
    let mut meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    for (k, v) in spec.to_key_values() {
        meta.push_str(&format!("spec.{k}={v}\n"));
    }
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

/// Mean per-unit true effect over a generated population.
pub fn empirical_ate(ds: &RctDataset, potential: &PotentialOutcomes) -> Result<f64> {
    Ok(mean(&true_effects(ds, potential)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_dataset_with_metadata, parse_key_values};
    use crate::rng;
    use nalgebra::DMatrix;

    #[test]
    fn noiseless_rank_one_effects() {
        let delta = 2.0;
        let spec = SyntheticSpec::rank_one(15, 10, vec![1.0, 1.5, 2.0], delta, 0.0);
        let (ds, po) = generate(&spec, &mut rng::from_seed(1)).unwrap();
        assert_eq!(ds.control.n_units(), 15);
        assert_eq!(ds.treatment.n_units(), 10);
        // Unit i's effect is u_i * delta; u_i is recovered from its baseline (v_0 = 1).
        for (i, eff) in true_effects(&ds, &po).unwrap().iter().enumerate() {
            let u = po.under_control.get(i, 0);
            assert!((eff - u * delta).abs() < 1e-12);
        }
        assert_eq!(ds.true_ate, Some(delta));
        for (i, row) in ds.control.rows().enumerate() {
            assert_eq!(row, po.under_control.row(i));
        }
        for (i, row) in ds.treatment.rows().enumerate() {
            assert_eq!(row, po.under_treatment.row(15 + i));
        }
    }

    #[test]
    fn identical_factors_have_zero_ate() {
        let spec = SyntheticSpec::rank_one(5, 5, vec![1.0, 2.0], 0.0, 0.3);
        assert_eq!(spec.true_ate().unwrap(), 0.0);
        let (ds, po) = generate(&spec, &mut rng::from_seed(2)).unwrap();
        assert_eq!(po.under_control, po.under_treatment);
        assert_eq!(ds.true_ate, Some(0.0));
    }

    #[test]
    fn noiseless_matrices_respect_rank() {
        let spec = SyntheticSpec {
            n_ctrl: 12,
            n_treat: 9,
            n_t: 5,
            rank: 2,
            unit_factor_range: (0.5, 1.5),
            time_factors_ctrl: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![1.0, -1.0, 0.5, 2.0, 0.0]],
            time_factors_treat: vec![vec![1.0, 2.5, 3.5, 5.0, 6.0], vec![1.0, -1.0, 0.0, 2.0, 1.0]],
            noise_sd: 0.0,
            outcome: OutcomeSpec::EndpointValue,
            visit_times: None,
        };
        let (_, po) = generate(&spec, &mut rng::from_seed(3)).unwrap();
        for m in [&po.under_control, &po.under_treatment] {
            let d: DMatrix<f64> = m.to_dmatrix();
            assert!(d.rank(1e-9) <= 2);
        }
    }

    #[test]
    fn true_ate_matches_population_mean() {
        let spec = SyntheticSpec {
            unit_factor_range: (1.0, 3.0),
            outcome: OutcomeSpec::TimeWeightedAverage,
            visit_times: Some(vec![0.0, 1.0, 3.0, 4.0]),
            ..SyntheticSpec::rank_one(3000, 3000, vec![2.0, 1.0, 3.0, 2.5], 0.7, 0.5)
        };
        let (ds, po) = generate(&spec, &mut rng::from_seed(4)).unwrap();
        let effects = true_effects(&ds, &po).unwrap();
        let m = mean(&effects);
        let sd = (effects.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (effects.len() - 1) as f64).sqrt();
        let truth = ds.true_ate.unwrap();
        assert!((truth - 1.4).abs() < 1e-12);
        assert!((m - truth).abs() < 3.0 * sd / (effects.len() as f64).sqrt());
    }

    #[test]
    fn validation_names_the_field() {
        let mut spec = SyntheticSpec::rank_one(5, 5, vec![1.0, 2.0], 1.0, 0.1);
        spec.rank = 0;
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("rank"), "{msg}");
        let mut spec = SyntheticSpec::rank_one(5, 5, vec![1.0, 2.0], 1.0, 0.1);
        spec.time_factors_treat[0][0] = 9.0;
        assert!(spec.validate().unwrap_err().to_string().contains("time_factors_treat"));
        let mut spec = SyntheticSpec::rank_one(5, 5, vec![1.0, 2.0], 1.0, 0.1);
        spec.noise_sd = -1.0;
        assert!(spec.validate().unwrap_err().to_string().contains("noise_sd"));
    }

    #[test]
    fn key_value_spec_round_trips() {
        let text = "n_ctrl=4\nn_treat=6\ntime_factors_ctrl=1,2,3\neffect=0.5\nnoise_sd=0.1\n";
        let spec = SyntheticSpec::from_key_values(&parse_key_values(text).unwrap()).unwrap();
        assert_eq!(spec.rank, 1);
        assert_eq!(spec.n_t, 3);
        assert_eq!(spec.time_factors_treat, vec![vec![1.0, 2.5, 3.5]]);
        let again = SyntheticSpec::from_key_values(&spec.to_key_values()).unwrap();
        assert_eq!(spec, again);
        let bad = parse_key_values("n_ctrl=4\nn_treat=6\nrank=0\ntime_factors_ctrl=1,2\neffect=1").unwrap();
        assert!(SyntheticSpec::from_key_values(&bad)
            .unwrap_err()
            .to_string()
            .contains("rank"));
        let typo = parse_key_values("n_ctrl=4\nn_treat=6\nnoise=1\ntime_factors_ctrl=1,2\neffect=1").unwrap();
        assert!(SyntheticSpec::from_key_values(&typo).is_err());
    }

    #[test]
    fn reproducible_and_saved() {
        let spec = SyntheticSpec::rank_one(6, 7, vec![1.0, 1.1, 1.4], 0.4, 0.2);
        let a = generate(&spec, &mut rng::from_seed(9)).unwrap();
        let b = generate(&spec, &mut rng::from_seed(9)).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syn.csv");
        save_synthetic(&a.0, &spec, &path).unwrap();
        let loaded = load_dataset_with_metadata(&path, OutcomeSpec::EndpointValue).unwrap();
        assert_eq!(loaded, a.0);
    }
}
