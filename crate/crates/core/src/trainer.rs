//! FBPINN state, global evaluation and losses, the overlap cache, and the
//! round-based training loop (optionally preceded by a coarse phase).
//!
//! The global solution is `u = u_g + Σ_j ω_j u_j(x̂_j)` with
//! `x̂_j = 2(x − c_j)/w_j`; the boundary treatment `𝒞` is applied on top.
//!
//! Within a round each active subdomain takes `p` optimizer steps against its
//! local loss. Contributions of every other network at the subdomain's points
//! are read from an [`OverlapCache`] that is only refreshed between rounds, so
//! active subdomains never observe each other mid-round and may run
//! concurrently.

use rayon::prelude::*;

use crate::decomp::{classify_points, sample_collocation, CollocationSets, Decomposition};
use crate::diffnet::{
    eval_many, eval_with_tape, init_params, loss_gradient_into, MlpParams, ParamGradient, PointLoss, Tape,
};
use crate::error::{FbpinnError, Result};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::pinn::{GlobalNet, PinnTrainer};
use crate::problem::{apply_constraint, ConstraintSpec, OdeProblem, ResidualInput};
use crate::report::{
    CoarseSample, FinalMetrics, HistoryRecord, LossBreakdown, Phase, RunReport, SolutionSample,
};
use crate::schedule::{ActiveSet, Schedule};

/// Settings shared by all local networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTraining {
    pub layer_sizes: Vec<usize>,
    pub optimizer: OptimizerConfig,
    /// Optimizer steps per active subdomain between cache refreshes.
    pub p: usize,
    /// Network `j` is initialized from `seed + j`.
    pub seed: u64,
    /// Evaluation grid size for L2 errors, as a multiple of the collocation count.
    pub eval_density: usize,
}

impl LocalTraining {
    pub fn new(layer_sizes: Vec<usize>, optimizer: OptimizerConfig, p: usize, seed: u64) -> Self {
        LocalTraining {
            layer_sizes,
            optimizer,
            p,
            seed,
            eval_density: 10,
        }
    }
}

/// Which subdomains count an overlap point when local losses are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribution {
    /// Every containing subdomain (what training uses).
    Shared,
    /// Only the lowest-indexed containing subdomain.
    LowestOwner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SiteKind {
    Residual { rhs: f64, c: f64, dc: f64 },
    Boundary { target: f64 },
}

/// A point where the loss (or an error metric) is evaluated.
#[derive(Debug, Clone)]
struct Site {
    x: f64,
    kind: SiteKind,
    /// Loss weight (1/N for residuals, λ_k/N_k for boundary points).
    scale: f64,
    /// `(subdomain, term index in that subdomain)`, ascending in subdomain.
    owners: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct LocalTerm {
    site: usize,
    window: f64,
    dwindow: f64,
    lowest_owner: bool,
}

/// Per-subdomain precomputed term data. `inputs[t]` is the normalized input of `terms[t]`.
#[derive(Debug, Clone)]
struct LocalData {
    inputs: Vec<f64>,
    terms: Vec<LocalTerm>,
    scale: f64,
}

/// Frozen contributions of all other networks at each subdomain's points.
///
/// `external[j][t]` holds `Σ_{l≠j} ω_l u_l + u_g` and its `x`-derivative at
/// term `t` of subdomain `j`. Entries at interior points carry only the coarse
/// term (zero without one).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlapCache {
    pub external: Vec<Vec<ResidualInput>>,
    overlap_mask: Vec<Vec<bool>>,
}

impl OverlapCache {
    /// Cached entries at overlap points `X_j^∘` of subdomain `j`, in point order.
    pub fn overlap_entries(&self, j: usize) -> Vec<ResidualInput> {
        self.external[j]
            .iter()
            .zip(&self.overlap_mask[j])
            .filter(|(_, &m)| m)
            .map(|(e, _)| *e)
            .collect()
    }

    pub fn overlap_len(&self) -> usize {
        self.overlap_mask.iter().flatten().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Default)]
struct Workspace {
    tape: Tape,
    grad: Option<ParamGradient>,
}

/// The coarse network of the two-level scheme.
#[derive(Debug, Clone)]
pub struct CoarseNet {
    pub net: GlobalNet,
    pub frozen: bool,
}

/// Evaluation grid with precomputed window data.
#[derive(Debug, Clone)]
struct Grid {
    xs: Vec<f64>,
    exact: Vec<f64>,
    owners: Vec<Vec<(usize, f64, f64, f64)>>,
}

pub struct FbpinnState {
    pub problem: OdeProblem,
    pub decomposition: Decomposition,
    pub collocation: CollocationSets,
    pub params: Vec<MlpParams>,
    pub optimizers: Vec<OptimizerState>,
    pub coarse: Option<CoarseNet>,
    pub settings: LocalTraining,
    pub round: usize,
    /// Optimizer steps taken (a round contributes `p`).
    pub step: usize,
    pub cache: OverlapCache,
    sites: Vec<Site>,
    locals: Vec<LocalData>,
    workspaces: Vec<Workspace>,
    grid: Grid,
}

impl FbpinnState {
    /// Sets up `J` local networks over `decomposition` with `n_points`
    /// equispaced collocation points, and performs the initial communication.
    pub fn new(
        problem: OdeProblem,
        decomposition: Decomposition,
        n_points: usize,
        settings: LocalTraining,
    ) -> Result<Self> {
        let points = sample_collocation(problem.domain, n_points)?;
        Self::with_points(problem, decomposition, &points, settings)
    }

    pub fn with_points(
        problem: OdeProblem,
        decomposition: Decomposition,
        points: &[f64],
        settings: LocalTraining,
    ) -> Result<Self> {
        if settings.p == 0 {
            return Err(FbpinnError::InvalidTraining("p must be at least 1".into()));
        }
        if decomposition.domain != problem.domain {
            return Err(FbpinnError::InvalidTraining(
                "decomposition and problem use different domains".into(),
            ));
        }
        let n_sub = decomposition.len();
        let collocation = classify_points(&decomposition, points)?;
        let params = (0..n_sub)
            .map(|j| init_params(&settings.layer_sizes, settings.seed.wrapping_add(j as u64)))
            .collect::<Result<Vec<_>>>()?;
        let optimizers = params
            .iter()
            .map(|p| OptimizerState::new(settings.optimizer, p.len()))
            .collect();

        let n = points.len() as f64;
        let mut sites: Vec<Site> = points
            .iter()
            .map(|&x| {
                let (c, dc) = problem.constraint.multiplier(x);
                Site {
                    x,
                    kind: SiteKind::Residual {
                        rhs: problem.rhs(x),
                        c,
                        dc,
                    },
                    scale: 1.0 / n,
                    owners: Vec::new(),
                }
            })
            .collect();
        if let ConstraintSpec::Soft { groups } = &problem.constraint {
            for g in groups {
                if g.points.is_empty() || g.points.len() != g.targets.len() {
                    return Err(FbpinnError::InvalidProblem(
                        "boundary group needs matching, non-empty points and targets".into(),
                    ));
                }
                for (&x, &target) in g.points.iter().zip(&g.targets) {
                    decomposition.domain.check(x)?;
                    sites.push(Site {
                        x,
                        kind: SiteKind::Boundary { target },
                        scale: g.weight / g.points.len() as f64,
                        owners: Vec::new(),
                    });
                }
            }
        }

        let mut locals: Vec<LocalData> = decomposition
            .subdomains
            .iter()
            .map(|s| LocalData {
                inputs: Vec::new(),
                terms: Vec::new(),
                scale: s.normalize_scale(),
            })
            .collect();
        for (si, site) in sites.iter_mut().enumerate() {
            let windows = decomposition.windows_at(site.x);
            for (k, &(j, w, dw)) in windows.iter().enumerate() {
                let local = &mut locals[j];
                site.owners.push((j, local.terms.len()));
                local.inputs.push(decomposition.subdomains[j].normalize(site.x));
                local.terms.push(LocalTerm {
                    site: si,
                    window: w,
                    dwindow: dw,
                    lowest_owner: k == 0,
                });
            }
        }

        let grid_xs = sample_collocation(
            problem.domain,
            (settings.eval_density.max(1) * points.len()).max(2),
        )?;
        let grid = Grid {
            exact: grid_xs.iter().map(|&x| problem.exact(x)).collect(),
            owners: grid_xs
                .iter()
                .map(|&x| {
                    decomposition
                        .windows_at(x)
                        .into_iter()
                        .map(|(j, w, dw)| (j, w, dw, decomposition.subdomains[j].normalize(x)))
                        .collect()
                })
                .collect(),
            xs: grid_xs,
        };

        let workspaces = vec![Workspace::default(); n_sub];
        let mut state = FbpinnState {
            problem,
            decomposition,
            collocation,
            params,
            optimizers,
            coarse: None,
            settings,
            round: 0,
            step: 0,
            cache: OverlapCache::default(),
            sites,
            locals,
            workspaces,
            grid,
        };
        state.communicate();
        Ok(state)
    }

    /// Adds a coarse network with the given shape, seeded from `seed`.
    pub fn add_coarse(&mut self, layer_sizes: &[usize], seed: u64) -> Result<()> {
        let params = init_params(layer_sizes, seed)?;
        self.coarse = Some(CoarseNet {
            net: GlobalNet::new(params, self.problem.domain),
            frozen: false,
        });
        self.communicate();
        Ok(())
    }

    pub fn n_sub(&self) -> usize {
        self.params.len()
    }

    fn coarse_at(&self, x: f64, tape: &mut Tape) -> ResidualInput {
        match &self.coarse {
            Some(c) => c.net.eval(x, tape),
            None => ResidualInput::default(),
        }
    }

    /// `ω_j u_j` and its `x`-derivative at every term of subdomain `j`.
    fn own_terms(&self, j: usize) -> Vec<ResidualInput> {
        let local = &self.locals[j];
        let mut tape = Tape::new();
        eval_many(&self.params[j], &local.inputs, &mut tape)
            .iter()
            .zip(&local.terms)
            .map(|(e, t)| own_term(t, local.scale, e.value, e.dvalue_dx))
            .collect()
    }

    fn all_own_terms(&self) -> Vec<Vec<ResidualInput>> {
        (0..self.n_sub()).into_par_iter().map(|j| self.own_terms(j)).collect()
    }

    fn coarse_at_sites(&self) -> Vec<ResidualInput> {
        let mut tape = Tape::new();
        self.sites.iter().map(|s| self.coarse_at(s.x, &mut tape)).collect()
    }

    /// Raw (pre-constraint) global sum and its derivative at `x`.
    pub fn evaluate_global(&self, x: f64) -> Result<ResidualInput> {
        self.problem.domain.check(x)?;
        let mut tape = Tape::new();
        let mut acc = self.coarse_at(x, &mut tape);
        for (j, w, dw) in self.decomposition.windows_at(x) {
            let s = &self.decomposition.subdomains[j];
            let e = eval_with_tape(&self.params[j], s.normalize(x), &mut tape);
            acc.u += w * e.value;
            acc.du_dx += dw * e.value + w * s.normalize_scale() * e.dvalue_dx;
        }
        Ok(acc)
    }

    /// Constrained solution `[𝒞u](x)`.
    pub fn solution(&self, x: f64) -> Result<f64> {
        let raw = self.evaluate_global(x)?;
        Ok(apply_constraint(&self.problem.constraint, x, raw).u)
    }

    /// Global loss over all collocation (and soft boundary) points with its
    /// interior/overlap split.
    pub fn global_loss(&self) -> Result<LossBreakdown> {
        let own = self.all_own_terms();
        let coarse = self.coarse_at_sites();
        let mut out = LossBreakdown {
            per_subdomain_interior: vec![0.0; self.n_sub()],
            ..Default::default()
        };
        for (si, site) in self.sites.iter().enumerate() {
            let mut acc = coarse[si];
            for &(j, t) in &site.owners {
                acc.u += own[j][t].u;
                acc.du_dx += own[j][t].du_dx;
            }
            let loss = site_loss(site, acc).0;
            if !loss.is_finite() {
                return Err(FbpinnError::numerical("non-finite residual", site.x));
            }
            out.total += loss;
            match site.kind {
                SiteKind::Boundary { .. } => out.boundary += loss,
                SiteKind::Residual { .. } if site.owners.len() == 1 => {
                    out.interior += loss;
                    // Only one window is nonzero here, so 𝒞(ω_j u_j) alone is the solution.
                    let (j, t) = site.owners[0];
                    let mut single = coarse[si];
                    single.u += own[j][t].u;
                    single.du_dx += own[j][t].du_dx;
                    out.per_subdomain_interior[j] +=
                        site_loss(site, single).0;
                }
                SiteKind::Residual { .. } => out.overlap += loss,
            }
        }
        Ok(out)
    }

    /// Recomputes the frozen external contributions from current parameters.
    pub fn refresh_overlap_cache(&self) -> OverlapCache {
        let own = self.all_own_terms();
        let coarse = self.coarse_at_sites();
        let mut external: Vec<Vec<ResidualInput>> = self
            .locals
            .iter()
            .map(|l| vec![ResidualInput::default(); l.terms.len()])
            .collect();
        let mut overlap_mask: Vec<Vec<bool>> = self
            .locals
            .iter()
            .map(|l| vec![false; l.terms.len()])
            .collect();
        for (si, site) in self.sites.iter().enumerate() {
            for &(j, t) in &site.owners {
                let mut acc = coarse[si];
                for &(l, tl) in &site.owners {
                    if l != j {
                        acc.u += own[l][tl].u;
                        acc.du_dx += own[l][tl].du_dx;
                    }
                }
                external[j][t] = acc;
                overlap_mask[j][t] = site.owners.len() > 1;
            }
        }
        OverlapCache {
            external,
            overlap_mask,
        }
    }

    /// Refreshes `self.cache` (the communication step).
    pub fn communicate(&mut self) {
        self.cache = self.refresh_overlap_cache();
    }

    /// Loss of subdomain `j` with `θ_j` live and everything else read from `cache`.
    pub fn local_loss(&self, j: usize, cache: &OverlapCache, attribution: Attribution) -> Result<f64> {
        let own = self.own_terms(j);
        let local = &self.locals[j];
        let mut total = 0.0;
        for (t, term) in local.terms.iter().enumerate() {
            if attribution == Attribution::LowestOwner && !term.lowest_owner {
                continue;
            }
            let site = &self.sites[term.site];
            let ext = cache.external[j][t];
            let pair = ResidualInput::new(own[t].u + ext.u, own[t].du_dx + ext.du_dx);
            let loss = site_loss(site, pair).0;
            if !loss.is_finite() {
                return Err(FbpinnError::numerical("non-finite residual", site.x).in_subdomain(j));
            }
            total += loss;
        }
        Ok(total)
    }

    /// Local loss of subdomain `j` and its gradient with respect to `θ_j`.
    pub fn local_loss_gradient(&self, j: usize, cache: &OverlapCache) -> Result<(f64, ParamGradient)> {
        let mut grad = self.params[j].zero_gradient();
        let mut tape = Tape::new();
        let loss = local_gradient(
            &self.params[j],
            &self.locals[j],
            &self.sites,
            &cache.external[j],
            &mut tape,
            &mut grad,
        )
        .map_err(|e| e.in_subdomain(j))?;
        Ok((loss, grad))
    }

    /// `p` optimizer steps on every active subdomain against the current cache,
    /// then one communication. Inactive parameters are untouched.
    pub fn train_round(&mut self, active: &ActiveSet, mut report: Option<&mut RunReport>) -> Result<()> {
        for j in &active.active {
            if *j >= self.n_sub() {
                return Err(FbpinnError::InvalidSchedule(format!(
                    "active subdomain {j} out of range"
                )));
            }
        }
        for _ in 0..self.settings.p {
            if let Some(r) = report.as_deref_mut() {
                if r.should_record(self.step) {
                    self.record(r, Phase::Local).map_err(|e| e.at_step(self.step))?;
                }
            }
            self.step_active(active).map_err(|e| e.at_step(self.step))?;
            self.step += 1;
        }
        self.communicate();
        self.round += 1;
        Ok(())
    }

    fn step_active(&mut self, active: &ActiveSet) -> Result<()> {
        let locals = &self.locals;
        let sites = &self.sites;
        let cache = &self.cache;
        let results: Vec<Result<()>> = self
            .params
            .par_iter_mut()
            .zip(self.optimizers.par_iter_mut())
            .zip(self.workspaces.par_iter_mut())
            .enumerate()
            .filter(|(j, _)| active.contains(*j))
            .map(|(j, ((params, opt), ws))| {
                let grad = ws.grad.get_or_insert_with(|| params.zero_gradient());
                local_gradient(
                    params,
                    &locals[j],
                    sites,
                    &cache.external[j],
                    &mut ws.tape,
                    grad,
                )
                .map_err(|e| e.in_subdomain(j))?;
                opt.step(params, grad);
                Ok(())
            })
            .collect();
        results.into_iter().collect()
    }

    /// Runs `rounds` rounds following `schedule`, recording into `report`.
    /// On failure the records gathered so far stay in `report`.
    pub fn train(&mut self, schedule: &Schedule, rounds: usize, report: &mut RunReport) -> Result<()> {
        if rounds == 0 {
            return Err(FbpinnError::InvalidTraining("rounds must be at least 1".into()));
        }
        if schedule.n_sub() != self.n_sub() {
            return Err(FbpinnError::InvalidSchedule(format!(
                "schedule is for {} subdomains, state has {}",
                schedule.n_sub(),
                self.n_sub()
            )));
        }
        let start = std::time::Instant::now();
        for _ in 0..rounds {
            let active = schedule.active_set(self.round);
            self.train_round(&active, Some(report))?;
        }
        self.finish(report)?;
        report.wall_time_s += start.elapsed().as_secs_f64();
        Ok(())
    }

    fn record(&self, report: &mut RunReport, phase: Phase) -> Result<()> {
        let loss = self.global_loss()?;
        report.history.push(HistoryRecord {
            step: self.step,
            round: self.round,
            phase,
            loss,
            l2_error: self.relative_l2_error(),
        });
        Ok(())
    }

    /// Final metrics and solution samples.
    pub fn finish(&self, report: &mut RunReport) -> Result<()> {
        report.final_metrics = Some(FinalMetrics {
            loss: self.global_loss()?,
            l2_error: self.relative_l2_error(),
            steps: self.step,
            rounds: self.round,
        });
        let values = self.grid_solution();
        report.solution = self
            .grid
            .xs
            .iter()
            .zip(&values)
            .zip(&self.grid.exact)
            .map(|((&x, &u_pred), &u_exact)| SolutionSample { x, u_pred, u_exact })
            .collect();
        Ok(())
    }

    /// Raw coarse and local-sum parts at each grid point.
    fn grid_parts(&self) -> Vec<(ResidualInput, ResidualInput)> {
        let mut tape = Tape::new();
        self.grid
            .xs
            .iter()
            .zip(&self.grid.owners)
            .map(|(&x, owners)| {
                let coarse = self.coarse_at(x, &mut tape);
                let mut local = ResidualInput::default();
                for &(j, w, dw, xh) in owners {
                    let e = eval_with_tape(&self.params[j], xh, &mut tape);
                    local.u += w * e.value;
                    local.du_dx += dw * e.value
                        + w * self.decomposition.subdomains[j].normalize_scale() * e.dvalue_dx;
                }
                (coarse, local)
            })
            .collect()
    }

    fn grid_solution(&self) -> Vec<f64> {
        let constraint = &self.problem.constraint;
        self.grid_parts()
            .into_iter()
            .zip(&self.grid.xs)
            .map(|((coarse, local), &x)| {
                let raw = ResidualInput::new(coarse.u + local.u, coarse.du_dx + local.du_dx);
                apply_constraint(constraint, x, raw).u
            })
            .collect()
    }

    /// Evaluation grid used for error metrics.
    pub fn grid_points(&self) -> &[f64] {
        &self.grid.xs
    }

    /// `‖u − u*‖₂ / ‖u*‖₂` on the evaluation grid.
    pub fn relative_l2_error(&self) -> f64 {
        relative_l2(&self.grid_solution(), &self.grid.exact)
    }

    /// Constrained coarse part, local part and their sum at each grid point.
    pub fn coarse_split(&self) -> Vec<CoarseSample> {
        let constraint = &self.problem.constraint;
        self.grid_parts()
            .into_iter()
            .zip(self.grid.xs.iter().zip(&self.grid.exact))
            .map(|((coarse, local), (&x, &u_exact))| {
                let raw = ResidualInput::new(coarse.u + local.u, coarse.du_dx + local.du_dx);
                CoarseSample {
                    x,
                    u_coarse: apply_constraint(constraint, x, coarse).u,
                    u_local: apply_constraint(constraint, x, local).u,
                    u_combined: apply_constraint(constraint, x, raw).u,
                    u_exact,
                }
            })
            .collect()
    }

    /// Two-level training: the coarse network alone for `coarse_epochs` steps
    /// on `coarse_points` equispaced points, then frozen while the local
    /// networks train for `local_rounds` rounds of `schedule`.
    ///
    /// A coarse network of the local shape is added if none exists.
    pub fn train_coarse_then_local(
        &mut self,
        coarse_epochs: usize,
        coarse_points: usize,
        local_rounds: usize,
        schedule: &Schedule,
        report: &mut RunReport,
    ) -> Result<()> {
        if self.coarse.is_none() {
            let seed = self.settings.seed.wrapping_add(self.n_sub() as u64);
            let sizes = self.settings.layer_sizes.clone();
            self.add_coarse(&sizes, seed)?;
        }
        let start = std::time::Instant::now();
        let coarse = self.coarse.take().expect("coarse network present");
        let mut phase_one = PinnTrainer::new(
            self.problem.clone(),
            coarse.net.params,
            coarse_points,
            self.settings.optimizer,
        )?;
        let grid = self.grid.xs.clone();
        let exact = self.grid.exact.clone();
        let relative = |t: &mut PinnTrainer| {
            let values: Vec<f64> = grid.iter().map(|&x| t.solution(x)).collect();
            relative_l2(&values, &exact)
        };
        for epoch in 0..coarse_epochs {
            if report.should_record(epoch) {
                let loss = phase_one.loss()?;
                report.history.push(HistoryRecord {
                    step: epoch,
                    round: epoch,
                    phase: Phase::Coarse,
                    loss: LossBreakdown {
                        total: loss,
                        interior: loss,
                        ..Default::default()
                    },
                    l2_error: relative(&mut phase_one),
                });
            }
            phase_one.step().map_err(|e| e.at_step(epoch))?;
        }
        report.extras.push(("coarse_final_loss".into(), phase_one.loss()?));
        report.extras.push(("coarse_l2_error".into(), relative(&mut phase_one)));
        if let Some(low) = self.problem.low_frequency_component() {
            let values: Vec<f64> = grid.iter().map(|&x| phase_one.solution(x)).collect();
            let target: Vec<f64> = grid.iter().map(|&x| low(x)).collect();
            report
                .extras
                .push(("coarse_low_frequency_l2_error".into(), relative_l2(&values, &target)));
        }

        self.coarse = Some(CoarseNet {
            net: phase_one.net,
            frozen: true,
        });
        self.step += coarse_epochs;
        self.communicate();
        report.wall_time_s += start.elapsed().as_secs_f64();
        if local_rounds == 0 {
            self.finish(report)?;
            return Ok(());
        }
        self.train(schedule, local_rounds, report)
    }
}

fn relative_l2(values: &[f64], exact: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&u, &e) in values.iter().zip(exact) {
        num += (u - e) * (u - e);
        den += e * e;
    }
    (num / den).sqrt()
}

fn own_term(t: &LocalTerm, scale: f64, value: f64, dvalue: f64) -> ResidualInput {
    ResidualInput::new(
        t.window * value,
        t.dwindow * value + t.window * scale * dvalue,
    )
}

/// Loss at one site for the raw pair `acc`, with partials w.r.t. `acc.u` and `acc.du_dx`.
fn site_loss(site: &Site, acc: ResidualInput) -> (f64, f64, f64) {
    match site.kind {
        SiteKind::Residual { rhs, c, dc } => {
            let r = dc * acc.u + c * acc.du_dx - rhs;
            let g = 2.0 * site.scale * r;
            (site.scale * r * r, g * dc, g * c)
        }
        SiteKind::Boundary { target } => {
            let e = acc.u - target;
            (site.scale * e * e, 2.0 * site.scale * e, 0.0)
        }
    }
}

fn local_gradient(
    params: &MlpParams,
    local: &LocalData,
    sites: &[Site],
    external: &[ResidualInput],
    tape: &mut Tape,
    grad: &mut ParamGradient,
) -> Result<f64> {
    loss_gradient_into(
        params,
        &local.inputs,
        |t, e| {
            let term = &local.terms[t];
            let own = own_term(term, local.scale, e.value, e.dvalue_dx);
            let ext = external[t];
            let acc = ResidualInput::new(own.u + ext.u, own.du_dx + ext.du_dx);
            let (loss, d_u, d_du) = site_loss(&sites[term.site], acc);
            // acc.u = ω v + …, acc.du = ω′v + ω s v′ + …
            PointLoss {
                loss,
                d_value: d_u * term.window + d_du * term.dwindow,
                d_dvalue: d_du * term.window * local.scale,
            }
        },
        tape,
        grad,
    )
    .map_err(|e| match e {
        FbpinnError::Numerical { what, x, subdomain, step } => {
            // Report the physical coordinate rather than the normalized input.
            let site_x = local
                .inputs
                .iter()
                .position(|&xh| xh == x)
                .map(|t| sites[local.terms[t].site].x)
                .unwrap_or(x);
            FbpinnError::Numerical {
                what,
                x: site_x,
                subdomain,
                step,
            }
        }
        other => other,
    })
}
