//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_methods, RunConfig};
use crate::data::RctDataset;
use crate::error::{Error, Result};
use crate::evaluation::{measure, render_csv, render_table, sample_size, ReportRow};
use crate::io::load_dataset_with_metadata;
use crate::methods::run_variant;
use crate::rng;
use crate::synthetic::{generate, save_synthetic, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(
    name = "secrets",
    version,
    about = "Counterfactual-ITE hypothesis tests for two-arm trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one method on a dataset and report the decision.
    Analyze(RunArgs),
    /// Measure power and significance level over simulated trials.
    Simulate(RunArgs),
    /// Subjects per arm needed for a target power.
    SampleSize {
        #[arg(long)]
        var_ctrl: f64,
        #[arg(long)]
        var_treat: f64,
        #[arg(long, allow_hyphen_values = true)]
        mu1: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
    },
}

/// Flags shared by `analyze` and `simulate`; each overrides the config file.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// `key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "spec")]
    pub dataset: Option<PathBuf>,
    /// Synthetic spec; the dataset is generated from `--seed`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Method name, or a comma-separated list for `simulate`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long = "n-a")]
    pub n_a: Option<usize>,
    /// Simulated trials per setting (L).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Null statistics per test (T).
    #[arg(long = "null-samples")]
    pub null_samples: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// `analyze`: JSON report path. `simulate`: output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Outcome for datasets without a sidecar.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Reuse control-arm SI tuning inside null sampling.
    #[arg(long)]
    pub cache_tuning: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.dataset {
            cfg.dataset = Some(p.clone());
            cfg.spec = None;
        }
        if let Some(p) = &self.spec {
            cfg.spec = Some(p.clone());
            cfg.dataset = None;
        }
        if let Some(m) = &self.method {
            cfg.methods = parse_methods(m)?;
        }
        if let Some(o) = &self.outcome {
            cfg.outcome = o.parse()?;
        }
        cfg.n_a = self.n_a.or(cfg.n_a);
        cfg.trials = self.trials.unwrap_or(cfg.trials);
        cfg.null_samples = self.null_samples.unwrap_or(cfg.null_samples);
        cfg.alpha = self.alpha.unwrap_or(cfg.alpha);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.workers = self.workers.unwrap_or(cfg.workers);
        cfg.out = self.out.clone().or(cfg.out);
        cfg.cache_tuning |= self.cache_tuning;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn data_stream(seed: u64) -> rng::Stream {
    rng::substream(seed, rng::label::DATA, 0)
}

/// The configured dataset, generated from the spec when one is given.
pub fn load_data(cfg: &RunConfig) -> Result<RctDataset> {
    match (&cfg.dataset, &cfg.spec) {
        (Some(p), _) => load_dataset_with_metadata(p, cfg.outcome),
        (None, Some(s)) => Ok(generate(&SyntheticSpec::load(s)?, &mut data_stream(cfg.seed))?.0),
        (None, None) => Err(Error::invalid("dataset or spec is required")),
    }
}

/// Write a synthetic dataset and its sidecar. Returns a one-line summary.
pub fn cmd_generate(spec_path: &Path, out: &Path, seed: u64) -> Result<String> {
    let spec = SyntheticSpec::load(spec_path)?;
    let (ds, _) = generate(&spec, &mut data_stream(seed))?;
    save_synthetic(&ds, &spec, out)?;
    Ok(format!(
        "wrote {} ({} control, {} treatment, {} timepoints, true ATE {})\n",
        out.display(),
        ds.control.n_units(),
        ds.treatment.n_units(),
        ds.n_t(),
        ds.true_ate.unwrap_or(f64::NAN)
    ))
}

#[derive(Debug, Serialize)]
struct AnalyzeReport<'a> {
    dataset: String,
    method: &'a str,
    decision: &'a str,
    reject: bool,
    statistic: f64,
    critical_value: f64,
    ate_estimate: f64,
    alpha: f64,
    null_samples: usize,
    n_ctrl: usize,
    n_treat: usize,
    seed: u64,
}

/// Run a single method on the dataset. Writes the JSON report to
/// `cfg.out` when set and returns the text shown on stdout.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<String> {
    let [method] = cfg.methods[..] else {
        return Err(Error::invalid("analyze takes exactly one method"));
    };
    let ds = load_data(cfg)?;
    let out = run_variant(&ds, method, &cfg.secrets_config(), &mut rng::from_seed(cfg.seed))?;
    let decision = if out.reject { "reject" } else { "fail to reject" };
    let report = AnalyzeReport {
        dataset: cfg.dataset_label(),
        method: method.name(),
        decision,
        reject: out.reject,
        statistic: out.statistic,
        critical_value: out.critical_value,
        ate_estimate: out.ate_estimate,
        alpha: cfg.alpha,
        null_samples: cfg.null_samples,
        n_ctrl: ds.control.n_units(),
        n_treat: ds.treatment.n_units(),
        seed: cfg.seed,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(path) = &cfg.out {
        fs::write(path, &json).map_err(|e| Error::io(path, e))?;
    }
    Ok(format!(
        "method:         {}\ndecision:       {}\nstatistic:      {}\ncritical value: {}\nATE estimate:   {}\n",
        method, decision, out.statistic, out.critical_value, out.ate_estimate
    ))
}

/// Rendered simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub rows: Vec<ReportRow>,
    pub csv: String,
    pub table: String,
}

/// Evaluate every configured method on the same trials (each method
/// restarts from the seed) using a pool of `cfg.workers` threads. Writes
/// `report.csv` and `report.txt` into `cfg.out` when set.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    let ds = load_data(cfg)?;
    let n_a = cfg
        .n_a
        .unwrap_or_else(|| ds.control.n_units().min(ds.treatment.n_units()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("workers: {e}")))?;
    let secrets = cfg.secrets_config();
    let rows = pool.install(|| {
        cfg.methods
            .iter()
            .map(|&method| {
                let report = measure(&ds, n_a, method, &secrets, cfg.trials, &mut rng::from_seed(cfg.seed))?;
                Ok(ReportRow {
                    dataset: cfg.dataset_label(),
                    method,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let csv = render_csv(&rows);
    let table = render_table(&rows);
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.csv", &csv), ("report.txt", &table)] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(SimulateOutput { rows, csv, table })
}

pub fn cmd_sample_size(var_ctrl: f64, var_treat: f64, mu1: f64, alpha: f64, beta: f64) -> Result<String> {
    Ok(format!("{}\n", sample_size(var_ctrl, var_treat, mu1, alpha, beta)?))
}

/// Execute a parsed command and return its stdout text.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate { spec, out, seed } => cmd_generate(&spec, &out, seed),
        Command::Analyze(args) => cmd_analyze(&args.resolve()?),
        Command::Simulate(args) => {
            let out = cmd_simulate(&args.resolve()?)?;
            Ok(format!("{}\n{}", out.table, out.csv))
        }
        Command::SampleSize {
            var_ctrl,
            var_treat,
            mu1,
            alpha,
            beta,
        } => cmd_sample_size(var_ctrl, var_treat, mu1, alpha, beta),
    }
}

/// Exit status for an error: 2 for validation, 3 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        2
    } else {
        3
    }
}
