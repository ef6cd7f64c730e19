//! JSON run configuration. Every block is optional and falls back to the
//! defaults of the single-frequency subdomain-scaling experiment.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomp::{build_decomposition, Decomposition, Interval};
use crate::error::{FbpinnError, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::problem::{make_single_frequency, make_two_frequency, ConstraintSpec, OdeProblem};
use crate::schedule::Schedule;
use crate::trainer::LocalTraining;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub decomposition: DecompositionConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub schedule: ScheduleConfig,
    pub coarse: CoarseConfig,
    pub sweep: SweepConfig,
    /// Output directory; the CLI `--out` flag takes precedence.
    pub output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    SingleFrequency,
    TwoFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub omega: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub domain: [f64; 2],
    pub constraint: ConstraintKind,
    /// Weight of the `u(0) = 0` penalty when `constraint` is `soft`.
    pub soft_weight: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            kind: ProblemKind::SingleFrequency,
            omega: 15.0,
            omega1: 1.0,
            omega2: 15.0,
            domain: [-2.0 * PI, 2.0 * PI],
            constraint: ConstraintKind::Hard,
            soft_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionConfig {
    pub subdomains: usize,
    /// `(w − h)/w` for subdomain width `w` and center spacing `h`.
    pub overlap_fraction: f64,
    pub collocation_points: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            subdomains: 16,
            overlap_fraction: 0.7,
            collocation_points: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_layers: 2,
            hidden_width: 16,
        }
    }
}

impl NetworkConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1];
        sizes.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        sizes.push(1);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Optimizer steps between overlap refreshes.
    pub p: usize,
    /// Total optimizer steps; the run uses `⌈steps / p⌉` rounds.
    /// Ignored when `rounds` is set.
    pub steps: usize,
    pub rounds: Option<usize>,
    pub record_interval: usize,
    pub seed: u64,
    /// Evaluation grid density relative to the collocation points.
    pub eval_density: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            p: 1,
            steps: 20_000,
            rounds: None,
            record_interval: 100,
            seed: 0,
            eval_density: 10,
        }
    }
}

impl TrainingConfig {
    pub fn effective_rounds(&self) -> usize {
        self.rounds.unwrap_or_else(|| self.steps.div_ceil(self.p.max(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Parallel,
    Alternating,
    Colored,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// 0-based subdomain sets: the colors (`colored`) or per-round sets (`explicit`).
    pub sets: Vec<Vec<usize>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Parallel,
            sets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseConfig {
    pub enabled: bool,
    pub coarse_points: usize,
    pub coarse_epochs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            enabled: false,
            coarse_points: 500,
            coarse_epochs: 3000,
            hidden_layers: 2,
            hidden_width: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub subdomains: Vec<usize>,
    pub p: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            subdomains: vec![8, 16, 32],
            p: vec![1, 10, 100, 1000],
        }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> FbpinnError {
    FbpinnError::InvalidTraining(format!("{key}: {msg}"))
}

impl RunConfig {
    /// Defaults of the two-level (coarse correction) experiment.
    pub fn coarse_defaults() -> Self {
        let mut c = RunConfig::default();
        c.problem.kind = ProblemKind::TwoFrequency;
        c.decomposition.subdomains = 30;
        c.coarse.enabled = true;
        c
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| FbpinnError::Serialization(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FbpinnError::Serialization(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let [a, b] = p.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid("problem.domain", "needs finite bounds with a < b"));
        }
        if !(a <= 0.0 && 0.0 <= b) {
            return Err(invalid("problem.domain", "must contain 0"));
        }
        let freqs: &[(&str, f64)] = match p.kind {
            ProblemKind::SingleFrequency => &[("problem.omega", p.omega)],
            ProblemKind::TwoFrequency => &[("problem.omega1", p.omega1), ("problem.omega2", p.omega2)],
        };
        for (key, w) in freqs {
            if !(w.is_finite() && *w != 0.0) {
                return Err(invalid(key, "must be finite and nonzero"));
            }
        }
        if !(p.soft_weight.is_finite() && p.soft_weight > 0.0) {
            return Err(invalid("problem.soft_weight", "must be positive"));
        }

        let d = &self.decomposition;
        if d.subdomains == 0 {
            return Err(invalid("decomposition.subdomains", "must be at least 1"));
        }
        if !(d.overlap_fraction > 0.0 && d.overlap_fraction < 1.0) {
            return Err(invalid("decomposition.overlap_fraction", "must lie in (0, 1)"));
        }
        if d.collocation_points < 2 {
            return Err(invalid("decomposition.collocation_points", "must be at least 2"));
        }

        if self.network.hidden_layers == 0 || self.network.hidden_width == 0 {
            return Err(invalid("network", "needs at least one hidden layer of positive width"));
        }

        let t = &self.training;
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(invalid("training.learning_rate", "must be positive"));
        }
        if t.p == 0 {
            return Err(invalid("training.p", "must be at least 1"));
        }
        if t.effective_rounds() == 0 {
            return Err(invalid("training.steps", "must give at least one round"));
        }
        if t.record_interval == 0 {
            return Err(invalid("training.record_interval", "must be at least 1"));
        }
        if t.eval_density == 0 {
            return Err(invalid("training.eval_density", "must be at least 1"));
        }

        self.schedule_for(d.subdomains)
            .map_err(|e| invalid("schedule", e))?;

        let c = &self.coarse;
        if c.enabled {
            if c.coarse_points < 2 {
                return Err(invalid("coarse.coarse_points", "must be at least 2"));
            }
            if c.hidden_layers == 0 || c.hidden_width == 0 {
                return Err(invalid("coarse", "needs at least one hidden layer of positive width"));
            }
        }

        if self.sweep.subdomains.is_empty() || self.sweep.subdomains.contains(&0) {
            return Err(invalid("sweep.subdomains", "needs positive entries"));
        }
        if self.sweep.p.is_empty() || self.sweep.p.contains(&0) {
            return Err(invalid("sweep.p", "needs positive entries"));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<OdeProblem> {
        let p = &self.problem;
        let domain = Interval::new(p.domain[0], p.domain[1])?;
        let problem = match p.kind {
            ProblemKind::SingleFrequency => make_single_frequency(p.omega, domain)?,
            ProblemKind::TwoFrequency => make_two_frequency(p.omega1, p.omega2, domain)?,
        };
        Ok(match p.constraint {
            ConstraintKind::Hard => problem,
            ConstraintKind::Soft => problem.with_constraint(ConstraintSpec::soft_origin(p.soft_weight)),
        })
    }

    pub fn build_decomposition(&self, n_sub: usize) -> Result<Decomposition> {
        let p = &self.problem;
        build_decomposition(
            Interval::new(p.domain[0], p.domain[1])?,
            n_sub,
            self.decomposition.overlap_fraction,
        )
    }

    pub fn schedule_for(&self, n_sub: usize) -> Result<Schedule> {
        match self.schedule.kind {
            ScheduleKind::Parallel => Schedule::parallel(n_sub),
            ScheduleKind::Alternating => Schedule::alternating(n_sub),
            ScheduleKind::Colored if self.schedule.sets.is_empty() => Schedule::red_black(n_sub),
            ScheduleKind::Colored => Schedule::colored(n_sub, self.schedule.sets.clone()),
            ScheduleKind::Explicit => Schedule::explicit(n_sub, self.schedule.sets.clone()),
        }
    }

    pub fn local_training(&self, p: usize) -> LocalTraining {
        let t = &self.training;
        LocalTraining {
            layer_sizes: self.network.layer_sizes(),
            optimizer: OptimizerConfig::new(t.optimizer, t.learning_rate),
            p,
            seed: t.seed,
            eval_density: t.eval_density,
        }
    }

    pub fn coarse_layer_sizes(&self) -> Vec<usize> {
        NetworkConfig {
            hidden_layers: self.coarse.hidden_layers,
            hidden_width: self.coarse.hidden_width,
        }
        .layer_sizes()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
