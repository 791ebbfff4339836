//! Optimal fares and wage: a congested-count grid over a dual-decomposed
//! relaxation, then local refinement of the full problem, with the
//! relaxation value reported as an upper bound.

mod refine;
mod relaxed;
mod subproblem;

pub use refine::{refine, RefineOutcome};
pub use relaxed::RelaxedSolution;
pub use subproblem::{dual_update, supply_subproblem, DualState, ZoneBounds, ZoneProblem, ZoneSolution};

use crate::behavior::{supply_hours, BehaviorParams};
use crate::equilibrium::{EquilibriumConfig, EquilibriumGuess, MarketState, PricingDecision};
use crate::error::{Error, Result};
use crate::numerics::{golden_max, linspace};
use crate::policy::{area_summary, welfare, AreaSummary, ChargeKind, ChargePolicy, WelfareReport};
use crate::scenario::Instance;
use relaxed::{Relaxation, Seed};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcGrid {
    pub min: f64,
    /// Defaults to the largest supply reachable within the wage bracket.
    pub max: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub nc_grid: NcGrid,
    /// Points in the second, local pass around the best grid value.
    pub nc_refine_points: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub max_dual_iters: usize,
    /// Relative constraint tolerance that ends the dual loop.
    pub dual_tol: f64,
    /// Fare bracket, $/min.
    pub r_bracket: [f64; 2],
    /// Wage bracket, $/hr; defaults to `[0.01, 3 q0]`.
    pub q_bracket: Option<[f64; 2]>,
    /// Fine zone-subproblem grid used for bound evaluation.
    pub r_grid_points: usize,
    pub ni_grid_points: usize,
    /// Grid used inside the dual iterations.
    pub coarse_grid_points: usize,
    pub refine_tol: f64,
    pub max_refine_iters: usize,
    pub eq: EquilibriumConfig,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nc_grid: NcGrid { min: 0.0, max: None, points: 25 },
            nc_refine_points: 5,
            gamma1: 1e-3,
            gamma2: 1e-3,
            max_dual_iters: 2000,
            dual_tol: 1e-4,
            r_bracket: [0.0, 6.0],
            q_bracket: None,
            r_grid_points: 240,
            ni_grid_points: 240,
            coarse_grid_points: 48,
            refine_tol: 1e-6,
            max_refine_iters: 200,
            eq: EquilibriumConfig::default(),
            threads: 0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Validation { invariant: s.to_string() });
        if self.nc_grid.points == 0 || self.r_grid_points < 2 || self.ni_grid_points < 2 || self.coarse_grid_points < 2 {
            return bad("solver grids nonempty");
        }
        if !(self.r_bracket[0] >= 0.0 && self.r_bracket[0] < self.r_bracket[1]) {
            return bad("r_bracket ordered");
        }
        if let Some([a, b]) = self.q_bracket {
            if !(a > 0.0 && a < b) {
                return bad("q_bracket ordered");
            }
        }
        if let Some(mx) = self.nc_grid.max {
            if !(mx >= self.nc_grid.min) {
                return bad("nc_grid ordered");
            }
        }
        if !(self.nc_grid.min >= 0.0) {
            return bad("nc_grid nonnegative");
        }
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0 && self.dual_tol > 0.0 && self.refine_tol > 0.0) {
            return bad("solver steps positive");
        }
        Ok(())
    }

    pub fn q_range(&self, p: &BehaviorParams) -> (f64, f64) {
        match self.q_bracket {
            Some([a, b]) => (a, b),
            None => (0.01, 3.0 * p.q0),
        }
    }

    /// Starting multipliers: the supply price sits a little above the
    /// reservation wage.
    pub fn initial_duals(&self, p: &BehaviorParams) -> DualState {
        DualState { delta: p.q0 + 2.0 / p.sigma_s, kappa: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    #[serde(rename = "nc_grid")]
    pub nc_points: Vec<f64>,
    #[serde(rename = "R_bar_by_nc")]
    pub bound_by_nc: Vec<f64>,
    pub dual_iterations: Vec<usize>,
    pub dual_feasible: Vec<bool>,
    /// Bound at the refined congested count, seeded with the refined decision.
    #[serde(rename = "R_bar_certified")]
    pub certified_bound: f64,
    pub refine_iterations: usize,
    pub equilibrium_solves: usize,
    pub profit_trace: Vec<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub policy_kind: ChargeKind,
    pub policy_level: f64,
    pub decision: PricingDecision,
    pub state: MarketState,
    #[serde(rename = "R")]
    pub profit: f64,
    #[serde(rename = "R_bar")]
    pub bound: f64,
    pub gap: f64,
    pub welfare: WelfareReport,
    pub areas: AreaSummary,
    pub relaxed: RelaxedSolution,
    pub diagnostics: SolverDiagnostics,
}

fn check_demand(inst: &Instance) -> Result<()> {
    let l0 = inst.lambda0();
    if l0.total() == 0.0 {
        return Err(Error::DegenerateDemand { zone: 0 });
    }
    for i in 0..inst.m() {
        if l0.row_sum(i) == 0.0 {
            return Err(Error::DegenerateDemand { zone: i });
        }
    }
    Ok(())
}

fn nc_upper(inst: &Instance, config: &SolverConfig) -> f64 {
    let p = inst.params();
    config.nc_grid.max.unwrap_or_else(|| supply_hours(config.q_range(p).1, p))
}

/// Relaxed bound as a function of the congested count, maximized over a
/// grid and one local refinement pass.
pub(crate) struct RelaxedSweep {
    pub points: Vec<RelaxedSolution>,
    pub best: RelaxedSolution,
}

/// Relative band below the best coarse bound inside which grid points get a fine-grid bound.
const CERTIFY_BAND: f64 = 0.01;

pub(crate) fn sweep_relaxed(rel: &Relaxation, inst: &Instance, config: &SolverConfig) -> RelaxedSweep {
    let p = inst.params();
    let d0 = config.initial_duals(p);
    if inst.network.congested_zones().is_empty() {
        let s = rel.run_certified(0.0, d0, f64::NEG_INFINITY);
        return RelaxedSweep { points: vec![s.clone()], best: s };
    }
    let lo = config.nc_grid.min;
    let hi = nc_upper(inst, config).max(lo);
    let grid = if config.nc_grid.points == 1 { vec![lo] } else { linspace(lo, hi, config.nc_grid.points) };
    let mut points: Vec<RelaxedSolution> = Vec::new();
    let mut incumbent = f64::NEG_INFINITY;
    let mut duals = d0;
    for &nc in &grid {
        let s = rel.run(nc, duals, incumbent);
        if s.dual_feasible {
            duals = s.duals;
            incumbent = incumbent.max(s.primal_value);
        }
        points.push(s);
    }
    let best_idx = argmax(&points);
    if grid.len() > 1 && config.nc_refine_points > 0 {
        let h = grid[1] - grid[0];
        let c = grid[best_idx];
        let local = linspace((c - h).max(lo), (c + h).min(hi), config.nc_refine_points + 2);
        let start = points[best_idx].duals;
        for &nc in &local[1..local.len() - 1] {
            if grid.iter().any(|&g| (g - nc).abs() < 1e-12 * hi.max(1.0)) {
                continue;
            }
            points.push(rel.run(nc, start, incumbent));
        }
        // golden-section search on the bound between the neighbours of the best local point
        let k = argmax(&points);
        let c = points[k].n_c;
        let step = 2.0 * h / (config.nc_refine_points + 1) as f64;
        let start = points[k].duals;
        let (a, b) = ((c - step).max(lo), (c + step).min(hi));
        if b > a {
            let mut eval = |nc: f64| {
                let s = rel.run(nc, start, f64::NEG_INFINITY);
                let v = s.r_bar;
                points.push(s);
                v
            };
            golden_max(&mut eval, a, b, 1e-3 * step, 8);
        }
    }
    // fine-grid bounds wherever the coarse value is close to the best
    let top = points.iter().map(|s| s.r_bar).fold(f64::NEG_INFINITY, f64::max);
    for s in points.iter_mut() {
        if s.r_bar >= top - CERTIFY_BAND * top.abs() {
            rel.certify_point(s);
        }
    }
    points.sort_by(|a, b| a.n_c.total_cmp(&b.n_c));
    let best = points[argmax(&points)].clone();
    RelaxedSweep { points, best }
}

fn argmax(points: &[RelaxedSolution]) -> usize {
    let mut k = 0;
    for (i, s) in points.iter().enumerate() {
        if s.r_bar > points[k].r_bar {
            k = i;
        }
    }
    k
}

/// Relaxed program at a single congested count.
pub fn solve_relaxed(inst: &Instance, policy: &ChargePolicy, n_c: f64, config: &SolverConfig) -> Result<RelaxedSolution> {
    config.validate()?;
    check_demand(inst)?;
    if !(n_c >= 0.0) {
        return Err(Error::NegativeInput("congested vehicle count"));
    }
    let rel = Relaxation::new(inst, policy, config);
    Ok(with_pool(config, || rel.run_certified(n_c, config.initial_duals(inst.params()), f64::NEG_INFINITY)))
}

/// Relaxed program maximized over the congested-count grid.
pub fn solve_relaxed_grid(
    inst: &Instance,
    policy: &ChargePolicy,
    config: &SolverConfig,
) -> Result<(RelaxedSolution, Vec<RelaxedSolution>)> {
    config.validate()?;
    check_demand(inst)?;
    let rel = Relaxation::new(inst, policy, config);
    let sw = with_pool(config, || sweep_relaxed(&rel, inst, config));
    Ok((sw.best, sw.points))
}

fn with_pool<T: Send>(config: &SolverConfig, f: impl FnOnce() -> T + Send) -> T {
    if config.threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(config.threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Full pipeline for one scenario and charge policy.
pub fn solve(inst: &Instance, policy: &ChargePolicy, config: &SolverConfig) -> Result<SolverReport> {
    config.validate()?;
    check_demand(inst)?;
    if policy.m() != inst.m() {
        return Err(Error::InvalidArgument("policy and scenario sizes differ".into()));
    }
    let t0 = Instant::now();
    with_pool(config, || solve_inner(inst, policy, config, t0))
}

fn solve_inner(inst: &Instance, policy: &ChargePolicy, config: &SolverConfig, t0: Instant) -> Result<SolverReport> {
    let rel = Relaxation::new(inst, policy, config);
    let sweep = sweep_relaxed(&rel, inst, config);
    let best = sweep.best.clone();
    let start = PricingDecision { r: best.r.clone(), q: best.q };
    let guess = EquilibriumGuess { n_idle: best.n_idle.clone(), n_c: best.n_c };
    let out = refine(inst, policy, &start, Some(&guess), config)?;
    let seed = Seed { r: out.decision.r.clone(), n_idle: out.state.n_idle.clone(), q: out.decision.q };
    let certified = rel.certify(out.state.n_c, best.duals, &seed);
    // the relaxed objective at the refined point is itself below the relaxed optimum
    let seeded_primal = relaxed_objective(&out.decision, &out.state);
    let grid_bound = sweep.points.iter().map(|s| s.r_bar).fold(f64::NEG_INFINITY, f64::max);
    let bound = grid_bound.max(certified).max(seeded_primal);
    let gap = if bound.abs() > 0.0 { (bound - out.profit) / bound.abs() } else { 0.0 };
    let welfare = welfare(&out.state, &out.decision, policy, inst);
    let areas = area_summary(&out.state, &out.decision, &inst.network);
    let diagnostics = SolverDiagnostics {
        nc_points: sweep.points.iter().map(|s| s.n_c).collect(),
        bound_by_nc: sweep.points.iter().map(|s| s.r_bar).collect(),
        dual_iterations: sweep.points.iter().map(|s| s.iterations).collect(),
        dual_feasible: sweep.points.iter().map(|s| s.dual_feasible).collect(),
        certified_bound: certified,
        refine_iterations: out.iterations,
        equilibrium_solves: out.equilibrium_solves,
        profit_trace: out.trace,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    Ok(SolverReport {
        policy_kind: policy.kind,
        policy_level: policy.level,
        decision: out.decision,
        state: out.state,
        profit: out.profit,
        bound,
        gap,
        welfare,
        areas,
        relaxed: best,
        diagnostics,
    })
}

fn relaxed_objective(d: &PricingDecision, s: &MarketState) -> f64 {
    let m = d.r.len();
    let mut rev = 0.0;
    for i in 0..m {
        for j in 0..m {
            rev += d.r[i] * s.lambda[(i, j)] * s.t[(i, j)];
        }
    }
    60.0 * rev - s.n_supply * d.q
}
