//! CSV and JSON artifacts.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use sparsam::metrics::StepTelemetry;
use sparsam::train::{OptimizerKind, RunOutcome};

use crate::CliError;

pub const STEP_HEADER: [&str; 7] = [
    "step",
    "loss",
    "grad_l1",
    "active_layers",
    "active_params",
    "grad_passes",
    "wall_ns",
];

/// Per-step telemetry log. `active_layers` is a `;`-separated index list.
pub struct StepCsv {
    writer: csv::Writer<File>,
}

impl StepCsv {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(STEP_HEADER)?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, s: &StepTelemetry) -> sparsam::Result<()> {
        let layers = s
            .active_layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(";");
        self.writer
            .write_record([
                s.step.to_string(),
                s.loss.to_string(),
                s.grad_l1.to_string(),
                layers,
                s.active_param_count.to_string(),
                s.grad_passes.to_string(),
                s.wall_ns.to_string(),
            ])
            .map_err(|e| sparsam::Error::Io(e.to_string()))
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}

const TOP_K_NOTE: &str = "expensive: full gradient pass per step for selection";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummaryFile {
    pub optimizer: String,
    pub config_digest: String,
    pub seed: u64,
    pub steps: usize,
    pub total_params: usize,
    pub final_loss: f64,
    pub active_ratio: f64,
    pub layer_frequency: Vec<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub total_grad_passes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<&'static str>,
}

impl RunSummaryFile {
    /// Expects a completed (non-diverged) run.
    pub fn new(kind: OptimizerKind, outcome: &RunOutcome) -> Self {
        let r = &outcome.record;
        let s = r.summary.as_ref().expect("completed run has a summary");
        Self {
            optimizer: kind.name().to_string(),
            config_digest: r.config_digest.clone(),
            seed: r.seed,
            steps: r.steps.len(),
            total_params: r.total_params(),
            final_loss: s.final_loss,
            active_ratio: s.active_ratio,
            layer_frequency: s.layer_frequency.clone(),
            train_accuracy: s.train_accuracy,
            test_accuracy: s.test_accuracy,
            total_grad_passes: r.total_grad_passes(),
            note: (kind == OptimizerKind::TopSlSam).then_some(TOP_K_NOTE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub optimizer: String,
    pub final_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub active_ratio: Option<f64>,
    pub note: String,
}

impl ComparisonRow {
    pub fn new(kind: OptimizerKind, outcome: &RunOutcome) -> Self {
        let mut notes = Vec::new();
        if kind == OptimizerKind::TopSlSam {
            notes.push(TOP_K_NOTE.to_string());
        }
        if let Some(e) = &outcome.diverged {
            notes.push(format!("diverged after {} steps: {e}", outcome.record.steps.len()));
        }
        let s = outcome.record.summary.as_ref();
        Self {
            optimizer: kind.name().to_string(),
            final_loss: s.map(|s| s.final_loss),
            train_accuracy: s.and_then(|s| s.train_accuracy),
            test_accuracy: s.and_then(|s| s.test_accuracy),
            active_ratio: s.map(|s| s.active_ratio),
            note: notes.join("; "),
        }
    }

    pub fn diverged(&self) -> bool {
        self.final_loss.is_none()
    }
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width rendering of the comparison for the terminal.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    let mut out = format!(
        "{:<14} {:>14} {:>10} {:>10} {:>12}  note\n",
        "optimizer", "final_loss", "train_acc", "test_acc", "active_ratio"
    );
    for r in rows {
        out += &format!(
            "{:<14} {:>14} {:>10} {:>10} {:>12}  {}\n",
            r.optimizer,
            r.final_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}")),
            cell(r.train_accuracy),
            cell(r.test_accuracy),
            cell(r.active_ratio),
            r.note
        );
    }
    out
}
