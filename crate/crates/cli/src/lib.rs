//! Benchmark harness around the `sparsam` optimizers: JSON experiment
//! configs, per-step CSV telemetry, run summaries and optimizer comparisons.

pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use thiserror::Error;

use sparsam::bandit::kl_project;
use sparsam::train::{train_with, OptimizerKind, RunOutcome};

pub use config::ExperimentConfig;
use report::{ComparisonRow, RunSummaryFile, StepCsv};

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "SPARSAM_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 0 success, 1 configuration or I/O failure, 2 divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Diverged(_) => 2,
            Self::Config(_) | Self::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Replaces the configured seed with `value` when set.
pub fn apply_seed_override(cfg: &mut ExperimentConfig, value: Option<&str>) -> Result<(), CliError> {
    if let Some(v) = value {
        cfg.train.seed = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
    }
    Ok(())
}

/// Files written by [`run_train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub steps_csv: PathBuf,
    pub summary_json: PathBuf,
    pub summary: RunSummaryFile,
}

/// Trains once, streaming `steps.csv` and then writing `summary.json` into
/// `out_dir`. On divergence the CSV holds every completed step and the
/// error is [`CliError::Diverged`].
pub fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainArtifacts, CliError> {
    let train_cfg = cfg.train_config()?;
    let problem = cfg.problem()?;
    let digest = cfg.digest();
    fs::create_dir_all(out_dir)?;
    let steps_csv = out_dir.join("steps.csv");
    let mut csv = StepCsv::create(&steps_csv)?;

    let result = train_with(&problem, &train_cfg, &digest, |view| csv.write(view.telemetry));
    csv.flush()?;
    let outcome = result.map_err(|e| match e {
        sparsam::Error::Io(msg) => CliError::Io(msg),
        other => CliError::Config(other.to_string()),
    })?;
    if let Some(e) = outcome.diverged {
        return Err(CliError::Diverged(format!(
            "{e} after {} completed steps; partial log in {}",
            outcome.record.steps.len(),
            steps_csv.display()
        )));
    }
    let summary = RunSummaryFile::new(train_cfg.optimizer, &outcome);
    let summary_json = out_dir.join("summary.json");
    fs::write(
        &summary_json,
        serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n",
    )?;
    log::info!("wrote {} and {}", steps_csv.display(), summary_json.display());
    Ok(TrainArtifacts {
        steps_csv,
        summary_json,
        summary,
    })
}

/// Parses a comma-separated optimizer list.
pub fn parse_optimizers(list: &str) -> Result<Vec<OptimizerKind>, CliError> {
    let kinds = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: sparsam::Error| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.len() < 2 {
        return Err(CliError::Config("compare needs at least two optimizers".into()));
    }
    Ok(kinds)
}

/// Runs every optimizer on the same data and seed, in parallel, and writes
/// `comparison.csv` into `out_dir`. Rows come back in the requested order.
pub fn run_compare(
    cfg: &ExperimentConfig,
    optimizers: &[OptimizerKind],
    out_dir: &Path,
) -> Result<Vec<ComparisonRow>, CliError> {
    let problem = cfg.problem()?;
    let configs = optimizers
        .iter()
        .map(|kind| {
            let mut row_cfg = cfg.clone();
            row_cfg.optimizer.kind = kind.name().to_string();
            row_cfg.validate()?;
            Ok((row_cfg.train_config()?, row_cfg.digest()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let outcomes: Vec<sparsam::Result<RunOutcome>> = thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(tc, digest)| scope.spawn(|| train_with(&problem, tc, digest, |_| Ok(()))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });

    let rows = optimizers
        .iter()
        .zip(outcomes)
        .map(|(&kind, outcome)| {
            outcome
                .map(|o| ComparisonRow::new(kind, &o))
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out_dir)?;
    report::write_comparison(&out_dir.join("comparison.csv"), &rows)?;
    Ok(rows)
}

/// Reads probabilities for `project`: either a literal comma-separated list
/// or the path of a file holding comma- or whitespace-separated values.
pub fn parse_probs(arg: &str) -> Result<Vec<f64>, CliError> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg)?
    } else {
        arg.to_string()
    };
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("{s:?} is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Config("no probabilities given".into()));
    }
    Ok(values)
}

/// KL projection of `u` onto `{Σq = s, p_min ≤ q ≤ 1}`.
pub fn project(u: &[f64], s: f64, p_min: f64) -> Result<Vec<f64>, CliError> {
    if u.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(CliError::Config("probabilities must be positive and finite".into()));
    }
    kl_project(u, s, p_min)
        .map(|d| d.probs().to_vec())
        .map_err(|e| CliError::Config(e.to_string()))
}
