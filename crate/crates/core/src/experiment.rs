//! Config-driven experiment drivers: a single run, the subdomain × `p`
//! sweep, and the two-level coarse correction run.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{FbpinnError, Result};
use crate::report::{io_err, RunReport};
use crate::trainer::FbpinnState;

/// Builds the training state for one `(J, p)` cell of `config`, including the
/// coarse network (seeded from `seed + J`) when the coarse block is enabled.
pub fn build_state(config: &RunConfig, n_sub: usize, p: usize) -> Result<FbpinnState> {
    let mut state = FbpinnState::new(
        config.build_problem()?,
        config.build_decomposition(n_sub)?,
        config.decomposition.collocation_points,
        config.local_training(p),
    )?;
    if config.coarse.enabled {
        state.add_coarse(
            &config.coarse_layer_sizes(),
            config.training.seed.wrapping_add(n_sub as u64),
        )?;
    }
    Ok(state)
}

fn write_checkpoints(state: &FbpinnState, dir: &Path) -> Result<()> {
    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(io_err)?;
    let dump = |name: String, value: serde_json::Value| -> Result<()> {
        let text = serde_json::to_string(&value)
            .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
        fs::write(ckpt.join(name), text).map_err(io_err)
    };
    for (j, params) in state.params.iter().enumerate() {
        dump(format!("local_{j:03}.json"), params.to_json())?;
    }
    if let Some(c) = &state.coarse {
        dump("coarse.json".into(), c.net.params.to_json())?;
    }
    let decomp = serde_json::to_string_pretty(&state.decomposition.to_json())
        .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    fs::write(dir.join("decomposition.json"), decomp).map_err(io_err)
}

fn train_cell(config: &RunConfig, n_sub: usize, p: usize) -> Result<(FbpinnState, RunReport)> {
    let mut state = build_state(config, n_sub, p)?;
    let schedule = config.schedule_for(n_sub)?;
    let mut report = RunReport::new(config.training.record_interval);
    let mut echo = config.clone();
    echo.decomposition.subdomains = n_sub;
    echo.training.p = p;
    report.config = echo.to_json();
    let rounds = config.training.rounds.unwrap_or_else(|| config.training.steps.div_ceil(p));
    if config.coarse.enabled {
        state.train_coarse_then_local(
            config.coarse.coarse_epochs,
            config.coarse.coarse_points,
            rounds,
            &schedule,
            &mut report,
        )?;
        report.coarse_solution = state.coarse_split();
    } else {
        state.train(&schedule, rounds, &mut report)?;
    }
    Ok((state, report))
}

/// One training run; writes its artifacts into `out`.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    let (state, report) = train_cell(config, config.decomposition.subdomains, config.training.p)?;
    report.write_artifacts(out)?;
    write_checkpoints(&state, out)?;
    Ok(report)
}

/// The two-level run; requires `coarse.enabled`.
pub fn coarse(config: &RunConfig, out: &Path) -> Result<RunReport> {
    if !config.coarse.enabled {
        return Err(FbpinnError::InvalidTraining(
            "coarse.enabled: must be true for the coarse experiment".into(),
        ));
    }
    run(config, out)
}

/// Outcome of one `(J, p)` sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub subdomains: usize,
    pub p: usize,
    pub final_loss: Option<f64>,
    pub final_l2_error: Option<f64>,
    pub initial_loss: Option<f64>,
    pub steps: usize,
    pub status: String,
    pub dir: PathBuf,
}

/// Runs every `(J, p)` combination of the sweep lists with the same seed,
/// one subdirectory per cell, plus `sweep_summary.csv`. A failing cell is
/// recorded as failed and the others still run.
pub fn sweep(config: &RunConfig, out: &Path) -> Result<Vec<SweepCell>> {
    config.validate()?;
    fs::create_dir_all(out).map_err(io_err)?;
    let grid: Vec<(usize, usize)> = config
        .sweep
        .subdomains
        .iter()
        .flat_map(|&j| config.sweep.p.iter().map(move |&p| (j, p)))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(n_sub, p)| {
            let dir = out.join(format!("J{n_sub}_p{p}"));
            let outcome = train_cell(config, n_sub, p).and_then(|(state, report)| {
                report.write_artifacts(&dir)?;
                write_checkpoints(&state, &dir)?;
                Ok(report)
            });
            match outcome {
                Ok(report) => {
                    let metrics = report.final_metrics.clone().unwrap_or_default();
                    SweepCell {
                        subdomains: n_sub,
                        p,
                        final_loss: Some(metrics.loss.total),
                        final_l2_error: Some(metrics.l2_error),
                        initial_loss: report.initial_loss(),
                        steps: metrics.steps,
                        status: "ok".into(),
                        dir,
                    }
                }
                Err(e) => SweepCell {
                    subdomains: n_sub,
                    p,
                    final_loss: None,
                    final_l2_error: None,
                    initial_loss: None,
                    steps: 0,
                    status: format!("failed: {e}"),
                    dir,
                },
            }
        })
        .collect();

    let mut w = csv::Writer::from_path(out.join("sweep_summary.csv"))
        .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    w.write_record(["J", "p", "final_loss", "final_l2_error", "steps", "status"])
        .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &cells {
        w.write_record([
            c.subdomains.to_string(),
            c.p.to_string(),
            opt(c.final_loss),
            opt(c.final_l2_error),
            c.steps.to_string(),
            c.status.clone(),
        ])
        .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    }
    w.flush().map_err(io_err)?;

    let mut w = csv::Writer::from_path(out.join("scaling_inversions.csv"))
        .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    w.write_record(["p", "fewer_J", "more_J"])
        .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    for (p, fewer, more) in scaling_inversions(&cells) {
        w.write_record([p.to_string(), fewer.to_string(), more.to_string()])
            .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
    }
    w.flush().map_err(io_err)?;
    Ok(cells)
}

/// Pairs of cells with the same `p` where more subdomains reached a strictly
/// lower final loss than fewer subdomains. Consecutive `J` values are compared.
pub fn scaling_inversions(cells: &[SweepCell]) -> Vec<(usize, usize, usize)> {
    let mut ps: Vec<usize> = cells.iter().map(|c| c.p).collect();
    ps.sort_unstable();
    ps.dedup();
    let mut found = Vec::new();
    for p in ps {
        let mut row: Vec<(usize, f64)> = cells
            .iter()
            .filter(|c| c.p == p)
            .filter_map(|c| c.final_loss.map(|l| (c.subdomains, l)))
            .collect();
        row.sort_by_key(|&(j, _)| j);
        for pair in row.windows(2) {
            if pair[1].1 < pair[0].1 {
                found.push((p, pair[0].0, pair[1].0));
            }
        }
    }
    found
}
