//! Run configuration: a plain `key=value` file, overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::OutcomeSpec;
use crate::error::{Error, Result};
use crate::io::read_key_values;
use crate::methods::{MethodChoice, SecretsConfig};
use crate::testing::{TestingParams, DEFAULT_N_BOOT};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub methods: Vec<MethodChoice>,
    /// Subjects per arm in simulated trials; defaults to the smaller arm.
    pub n_a: Option<usize>,
    /// Simulated trials per setting (L).
    pub trials: usize,
    /// Null statistics per test (T).
    pub null_samples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    /// Outcome used when the dataset has no sidecar.
    pub outcome: OutcomeSpec,
    pub cache_tuning: bool,
    pub n_boot: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            spec: None,
            methods: vec![MethodChoice::Secrets],
            n_a: None,
            trials: 1000,
            null_samples: 100,
            alpha: 0.05,
            seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            out: None,
            outcome: OutcomeSpec::default(),
            cache_tuning: false,
            n_boot: DEFAULT_N_BOOT,
        }
    }
}

pub fn parse_methods(s: &str) -> Result<Vec<MethodChoice>> {
    let methods: Vec<MethodChoice> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::invalid("method: empty list"));
    }
    Ok(methods)
}

fn parse_field<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Apply `key=value` settings on top of the defaults. Relative paths are
    /// resolved against `base_dir`.
    pub fn from_key_values(kv: &BTreeMap<String, String>, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let path = |v: &str| base_dir.join(v.trim());
        for (k, v) in kv {
            match k.as_str() {
                "dataset" => cfg.dataset = Some(path(v)),
                "spec" => cfg.spec = Some(path(v)),
                "method" | "methods" => cfg.methods = parse_methods(v)?,
                "n_a" => cfg.n_a = Some(parse_field(k, v)?),
                "trials" => cfg.trials = parse_field(k, v)?,
                "null_samples" => cfg.null_samples = parse_field(k, v)?,
                "alpha" => cfg.alpha = parse_field(k, v)?,
                "seed" => cfg.seed = parse_field(k, v)?,
                "workers" => cfg.workers = parse_field(k, v)?,
                "out" => cfg.out = Some(path(v)),
                "outcome" => cfg.outcome = v.parse()?,
                "cache_tuning" => cfg.cache_tuning = parse_bool(k, v)?,
                "n_boot" => cfg.n_boot = parse_field(k, v)?,
                _ => return Err(Error::invalid(format!("unknown config key {k:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_key_values(&read_key_values(path)?, base)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.spec) {
            (Some(_), Some(_)) => return Err(Error::invalid("give either dataset or spec, not both")),
            (None, None) => return Err(Error::invalid("dataset or spec is required")),
            _ => {}
        }
        if self.trials < 1 {
            return Err(Error::invalid("trials: L must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha: must be in (0, 1), got {}", self.alpha)));
        }
        if self.workers < 1 {
            return Err(Error::invalid("workers: must be >= 1"));
        }
        if let Some(n) = self.n_a {
            if n < 2 {
                return Err(Error::invalid(format!("n_a: must be >= 2, got {n}")));
            }
        }
        self.secrets_config().validate()
    }

    pub fn secrets_config(&self) -> SecretsConfig {
        SecretsConfig {
            testing: TestingParams::with_alpha(self.alpha),
            null_samples: self.null_samples,
            n_boot: self.n_boot,
            cache_tuning: self.cache_tuning,
            ..SecretsConfig::default()
        }
    }

    /// Label for report rows: the dataset or spec file stem.
    pub fn dataset_label(&self) -> String {
        self.dataset
            .as_ref()
            .or(self.spec.as_ref())
            .and_then(|p| p.file_stem())
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
    }
}
