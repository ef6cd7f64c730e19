//! First-order ODE test problems `du/dx = f(x)`, `u(0) = 0`, with their
//! boundary treatment and analytic solutions.

use std::fmt;
use std::sync::Arc;

use crate::decomp::Interval;
use crate::error::{FbpinnError, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A value together with its derivative along `x`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualInput {
    pub u: f64,
    pub du_dx: f64,
}

impl ResidualInput {
    pub fn new(u: f64, du_dx: f64) -> Self {
        ResidualInput { u, du_dx }
    }
}

/// How the boundary condition is imposed.
#[derive(Clone)]
pub enum ConstraintSpec {
    /// Ansatz `[𝒞u](x) = c(x)·u(x)` with `c` vanishing at the constrained point.
    Hard {
        multiplier: ScalarFn,
        derivative: ScalarFn,
    },
    /// Penalty `Σ_k λ_k/N_k Σ_j (u(x_kj) − g_kj)²` added to the PDE loss.
    Soft { groups: Vec<BoundaryGroup> },
}

/// One boundary condition's sample points, targets and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGroup {
    pub points: Vec<f64>,
    pub targets: Vec<f64>,
    pub weight: f64,
}

impl ConstraintSpec {
    /// `c(x) = tanh(x)`, pinning `u(0) = 0`.
    pub fn tanh() -> Self {
        ConstraintSpec::Hard {
            multiplier: Arc::new(f64::tanh),
            derivative: Arc::new(|x: f64| {
                let t = x.tanh();
                1.0 - t * t
            }),
        }
    }

    /// `c ≡ 1`: the raw network sum is the solution.
    pub fn identity() -> Self {
        ConstraintSpec::Hard {
            multiplier: Arc::new(|_| 1.0),
            derivative: Arc::new(|_| 0.0),
        }
    }

    /// Soft penalty for `u(0) = 0` with weight `lambda`.
    pub fn soft_origin(lambda: f64) -> Self {
        ConstraintSpec::Soft {
            groups: vec![BoundaryGroup {
                points: vec![0.0],
                targets: vec![0.0],
                weight: lambda,
            }],
        }
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, ConstraintSpec::Hard { .. })
    }

    /// `(c(x), c′(x))`; the soft kind leaves the solution untouched.
    pub fn multiplier(&self, x: f64) -> (f64, f64) {
        match self {
            ConstraintSpec::Hard {
                multiplier,
                derivative,
            } => (multiplier(x), derivative(x)),
            ConstraintSpec::Soft { .. } => (1.0, 0.0),
        }
    }
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintSpec::Hard { .. } => f.write_str("Hard"),
            ConstraintSpec::Soft { groups } => f.debug_struct("Soft").field("groups", groups).finish(),
        }
    }
}

/// `du/dx = f(x)` on a domain, with its exact solution.
#[derive(Clone)]
pub struct OdeProblem {
    pub domain: Interval,
    pub frequencies: Vec<f64>,
    pub constraint: ConstraintSpec,
    rhs: ScalarFn,
    exact: ScalarFn,
    exact_derivative: ScalarFn,
    low_component: Option<ScalarFn>,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("domain", &self.domain)
            .field("frequencies", &self.frequencies)
            .field("constraint", &self.constraint)
            .finish()
    }
}

fn check_setup(frequencies: &[f64], domain: Interval) -> Result<()> {
    if let Some(w) = frequencies.iter().find(|w| !(w.is_finite() && **w != 0.0)) {
        return Err(FbpinnError::InvalidProblem(format!(
            "frequencies must be finite and nonzero, got {w}"
        )));
    }
    if !domain.contains(0.0) {
        return Err(FbpinnError::InvalidProblem(format!(
            "domain [{}, {}] must contain 0 for the u(0) = 0 condition",
            domain.a, domain.b
        )));
    }
    Ok(())
}

/// `du/dx = cos(ωx)`, `u* = sin(ωx)/ω`.
pub fn make_single_frequency(omega: f64, domain: Interval) -> Result<OdeProblem> {
    check_setup(&[omega], domain)?;
    Ok(OdeProblem {
        domain,
        frequencies: vec![omega],
        constraint: ConstraintSpec::tanh(),
        rhs: Arc::new(move |x| (omega * x).cos()),
        exact: Arc::new(move |x| (omega * x).sin() / omega),
        exact_derivative: Arc::new(move |x| (omega * x).cos()),
        low_component: None,
    })
}

/// `du/dx = ω₁cos(ω₁x) + ω₂cos(ω₂x)`, `u* = sin(ω₁x) + sin(ω₂x)`.
pub fn make_two_frequency(omega1: f64, omega2: f64, domain: Interval) -> Result<OdeProblem> {
    check_setup(&[omega1, omega2], domain)?;
    Ok(OdeProblem {
        domain,
        frequencies: vec![omega1, omega2],
        constraint: ConstraintSpec::tanh(),
        rhs: Arc::new(move |x| omega1 * (omega1 * x).cos() + omega2 * (omega2 * x).cos()),
        exact: Arc::new(move |x| (omega1 * x).sin() + (omega2 * x).sin()),
        exact_derivative: Arc::new(move |x| {
            omega1 * (omega1 * x).cos() + omega2 * (omega2 * x).cos()
        }),
        low_component: Some(Arc::new(move |x| (omega1 * x).sin())),
    })
}

impl OdeProblem {
    pub fn with_constraint(mut self, constraint: ConstraintSpec) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn rhs(&self, x: f64) -> f64 {
        (self.rhs)(x)
    }

    pub fn exact(&self, x: f64) -> f64 {
        (self.exact)(x)
    }

    pub fn exact_derivative(&self, x: f64) -> f64 {
        (self.exact_derivative)(x)
    }

    /// The `sin(ω₁x)` part of a two-frequency solution.
    pub fn low_frequency_component(&self) -> Option<&(dyn Fn(f64) -> f64 + Send + Sync)> {
        self.low_component.as_deref()
    }

    /// `𝒩[u] − f` for `𝒩 = d/dx`, given the constrained value/derivative pair.
    pub fn residual(&self, x: f64, constrained: ResidualInput) -> f64 {
        constrained.du_dx - self.rhs(x)
    }
}

/// `(c·u, c′·u + c·u′)` for the hard constraint; identity for soft.
pub fn apply_constraint(constraint: &ConstraintSpec, x: f64, raw: ResidualInput) -> ResidualInput {
    let (c, dc) = constraint.multiplier(x);
    ResidualInput {
        u: c * raw.u,
        du_dx: dc * raw.u + c * raw.du_dx,
    }
}

/// Weighted boundary penalty. `evals[k][j]` is `(value, target)` for point `j`
/// of boundary group `k`.
pub fn soft_boundary_loss(groups: &[BoundaryGroup], evals: &[Vec<(f64, f64)>]) -> Result<f64> {
    if groups.is_empty() || evals.iter().all(Vec::is_empty) {
        return Err(FbpinnError::InvalidProblem("empty boundary point set".into()));
    }
    Ok(groups
        .iter()
        .zip(evals)
        .filter(|(_, e)| !e.is_empty())
        .map(|(g, e)| {
            let sq: f64 = e.iter().map(|(v, t)| (v - t) * (v - t)).sum();
            g.weight / e.len() as f64 * sq
        })
        .sum())
}
