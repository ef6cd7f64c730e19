//! Training histories and the CSV/JSON artifacts written for each run.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{FbpinnError, Result};

/// Global loss split into interior, overlap and (soft) boundary parts.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub interior: f64,
    pub overlap: f64,
    pub boundary: f64,
    /// Interior contribution of each subdomain, `Σ_{x ∈ X_j^int}`.
    #[serde(skip)]
    pub per_subdomain_interior: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Coarse network alone.
    Coarse,
    /// Local networks (with the coarse network frozen, if present).
    Local,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub round: usize,
    pub phase: Phase,
    pub loss: LossBreakdown,
    pub l2_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionSample {
    pub x: f64,
    pub u_pred: f64,
    pub u_exact: f64,
}

/// Per-point split of the two-level solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoarseSample {
    pub x: f64,
    pub u_coarse: f64,
    pub u_local: f64,
    pub u_combined: f64,
    pub u_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FinalMetrics {
    pub loss: LossBreakdown,
    pub l2_error: f64,
    pub steps: usize,
    pub rounds: usize,
}

/// Everything a training run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub record_interval: usize,
    pub history: Vec<HistoryRecord>,
    pub final_metrics: Option<FinalMetrics>,
    pub solution: Vec<SolutionSample>,
    pub coarse_solution: Vec<CoarseSample>,
    /// Extra named scalars (e.g. phase-one diagnostics).
    pub extras: Vec<(String, f64)>,
    pub wall_time_s: f64,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn new(record_interval: usize) -> Self {
        RunReport {
            record_interval: record_interval.max(1),
            history: Vec::new(),
            final_metrics: None,
            solution: Vec::new(),
            coarse_solution: Vec::new(),
            extras: Vec::new(),
            wall_time_s: 0.0,
            config: serde_json::Value::Null,
        }
    }

    pub fn should_record(&self, step: usize) -> bool {
        step % self.record_interval == 0
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.history.first().map(|r| r.loss.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.final_metrics.as_ref().map(|m| m.loss.total)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let extras: serde_json::Map<String, serde_json::Value> = self
            .extras
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "final_metrics": self.final_metrics,
            "initial_loss": self.initial_loss(),
            "records": self.history.len(),
            "record_interval": self.record_interval,
            "extras": extras,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        })
    }

    /// Writes `loss_history.csv`, `solution.csv`, `summary.json` and, when the
    /// run had a coarse phase, `coarse_solution.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err)?;
        let mut w = csv::Writer::from_path(dir.join("loss_history.csv")).map_err(csv_err)?;
        w.write_record(["step", "round", "total", "interior", "overlap", "l2_error", "phase", "boundary"])
            .map_err(csv_err)?;
        for r in &self.history {
            w.write_record([
                r.step.to_string(),
                r.round.to_string(),
                r.loss.total.to_string(),
                r.loss.interior.to_string(),
                r.loss.overlap.to_string(),
                r.l2_error.to_string(),
                r.phase.as_str().to_string(),
                r.loss.boundary.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;

        let mut w = csv::Writer::from_path(dir.join("solution.csv")).map_err(csv_err)?;
        for s in &self.solution {
            w.serialize(s).map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;

        if !self.coarse_solution.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("coarse_solution.csv")).map_err(csv_err)?;
            for s in &self.coarse_solution {
                w.serialize(s).map_err(csv_err)?;
            }
            w.flush().map_err(io_err)?;
        }

        let summary = serde_json::to_string_pretty(&self.summary_json())
            .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
        fs::write(dir.join("summary.json"), summary).map_err(io_err)?;
        Ok(())
    }
}

pub(crate) fn io_err(e: std::io::Error) -> FbpinnError {
    FbpinnError::Serialization(e.to_string())
}

fn csv_err(e: csv::Error) -> FbpinnError {
    FbpinnError::Serialization(e.to_string())
}
