//! Dataset files.
//!
//! A dataset is a CSV file with header `unit_id,arm,t1,...,tK` and one row per
//! subject, `arm` being `ctrl` or `treat`. An optional sidecar next to it
//! (`<file>.meta`, plain `key=value` lines) records the outcome definition,
//! the visit schedule and, for synthetic data, the true ATE.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{OutcomeSpec, RctDataset, TrajectoryMatrix};
use crate::error::{Error, Result};

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn parse_error(path: &Path, line: u64, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column.into(),
        message: message.into(),
    }
}

/// Read a dataset CSV. Row order within each arm follows file order.
pub fn load_dataset(path: &Path, outcome: OutcomeSpec) -> Result<RctDataset> {
    load_with(path, outcome, None, None)
}

/// Read a dataset CSV together with its sidecar, if one exists. The
/// sidecar's outcome, when present, wins over `default_outcome`.
pub fn load_dataset_with_metadata(path: &Path, default_outcome: OutcomeSpec) -> Result<RctDataset> {
    let meta_path = sidecar_path(path);
    if !meta_path.exists() {
        return load_dataset(path, default_outcome);
    }
    let meta = read_key_values(&meta_path)?;
    let outcome = match meta.get("outcome") {
        Some(v) => v.parse()?,
        None => default_outcome,
    };
    let visit_times = meta.get("visit_times").map(|v| parse_reals(v)).transpose()?;
    let true_ate = meta
        .get("true_ate")
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad true_ate {v:?} in {}", meta_path.display())))
        })
        .transpose()?;
    load_with(path, outcome, visit_times, true_ate)
}

fn load_with(
    path: &Path,
    outcome: OutcomeSpec,
    visit_times: Option<Vec<f64>>,
    true_ate: Option<f64>,
) -> Result<RctDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_error(path, 1, "-", format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| parse_error(path, 1, "-", e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 2 || names[0] != "unit_id" || names[1] != "arm" {
        return Err(parse_error(
            path,
            1,
            "header",
            "expected header to start with unit_id,arm",
        ));
    }
    let n_t = names.len() - 2;
    if n_t < 2 {
        return Err(parse_error(
            path,
            1,
            "header",
            format!("need at least 2 timepoint columns, found {n_t}"),
        ));
    }
    for (k, name) in names[2..].iter().enumerate() {
        if *name != format!("t{}", k + 1) {
            return Err(parse_error(path, 1, *name, format!("expected column t{}", k + 1)));
        }
    }

    let mut ctrl = Vec::new();
    let mut treat = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line, "-", e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != names.len() {
            return Err(parse_error(
                path,
                line,
                "-",
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let target = match &record[1] {
            "ctrl" => &mut ctrl,
            "treat" => &mut treat,
            other => return Err(parse_error(path, line, "arm", format!("unknown arm label {other:?}"))),
        };
        for (k, cell) in record.iter().skip(2).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_error(path, line, names[k + 2], format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    line,
                    names[k + 2],
                    format!("non-finite value {cell:?}"),
                ));
            }
            target.push(v);
        }
    }
    let arm = |name: &str, data: Vec<f64>| {
        TrajectoryMatrix::from_row_major(data.len() / n_t, n_t, data)
            .map_err(|e| parse_error(path, 0, "arm", format!("{name} arm: {e}")))
    };
    RctDataset::new(arm("ctrl", ctrl)?, arm("treat", treat)?, outcome, visit_times, true_ate)
}

/// Write the dataset CSV and its sidecar. Values are written in shortest
/// round-trip form, so reloading reproduces them bit for bit.
pub fn save_dataset(ds: &RctDataset, path: &Path) -> Result<()> {
    let mut out = String::from("unit_id,arm");
    for t in 1..=ds.n_t() {
        out.push_str(&format!(",t{t}"));
    }
    out.push('\n');
    let mut id = 0usize;
    for (label, arm) in [("ctrl", &ds.control), ("treat", &ds.treatment)] {
        for row in arm.rows() {
            out.push_str(&format!("{id},{label}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
            id += 1;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let mut meta = format!("outcome={}\n", ds.outcome);
    if let Some(times) = &ds.visit_times {
        meta.push_str(&format!("visit_times={}\n", join_reals(times)));
    }
    if let Some(ate) = ds.true_ate {
        meta.push_str(&format!("true_ate={ate}\n"));
    }
    let meta_path = sidecar_path(path);
    fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text).map_err(|(line, msg)| parse_error(path, line, "-", msg))
}

pub fn parse_key_values(text: &str) -> std::result::Result<BTreeMap<String, String>, (u64, String)> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| (i as u64 + 1, format!("expected key=value, got {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub(crate) fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number {x:?} in list {s:?}")))
        })
        .collect()
}

pub(crate) fn join_reals(xs: &[f64]) -> String {
    xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("d.csv");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_arms_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "unit_id,arm,t1,t2,t3\n0,ctrl,1,2,3\n1,treat,4,5,6\n2,ctrl,7,8,9\n3,treat,1.5,2.5,3.5\n",
        );
        let ds = load_dataset(&p, OutcomeSpec::default()).unwrap();
        assert_eq!(ds.control.n_units(), 2);
        assert_eq!(ds.treatment.n_units(), 2);
        assert_eq!(ds.control.row(1), &[7.0, 8.0, 9.0]);
        assert_eq!(ds.treatment.row(1), &[1.5, 2.5, 3.5]);
    }

    #[test]
    fn reports_offending_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "unit_id,arm,t1,t2\n0,ctrl,1,2\n1,treat,NaN,2\n");
        let err = load_dataset(&p, OutcomeSpec::default()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("t1"), "{err}");

        let p = write(dir.path(), "unit_id,arm,t1,t2\n0,ctrl,1,x\n");
        let err = load_dataset(&p, OutcomeSpec::default()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("t2"), "{err}");

        let p = write(dir.path(), "unit_id,arm,t1,t2\n0,placebo,1,2\n");
        let err = load_dataset(&p, OutcomeSpec::default()).unwrap_err().to_string();
        assert!(err.contains("placebo"), "{err}");

        let p = write(dir.path(), "unit_id,arm,t1\n0,ctrl,1\n");
        assert!(load_dataset(&p, OutcomeSpec::default()).is_err());

        let p = write(dir.path(), "unit_id,arm,t1,t2\n0,ctrl,1,2,3\n");
        let err = load_dataset(&p, OutcomeSpec::default()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        let p = write(dir.path(), "id,arm,t1,t2\n0,ctrl,1,2\n");
        assert!(load_dataset(&p, OutcomeSpec::default()).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ctrl = TrajectoryMatrix::from_rows(&[[0.1, 1.0 / 3.0, -2.5e-17], [1e300, 7.0, 0.3]]).unwrap();
        let treat = TrajectoryMatrix::from_rows(&[[std::f64::consts::PI, 2.0, 5.0]]).unwrap();
        let ds = RctDataset::new(
            ctrl,
            treat,
            OutcomeSpec::TimeWeightedAverage,
            Some(vec![0.0, 0.5, 2.0]),
            Some(-0.125),
        )
        .unwrap();
        let p = dir.path().join("rt.csv");
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset_with_metadata(&p, OutcomeSpec::default()).unwrap();
        assert_eq!(back, ds);
    }
}
