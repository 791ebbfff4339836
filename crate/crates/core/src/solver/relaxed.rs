//! Dual decomposition of the relaxed program at a fixed congested count.

use super::subproblem::{dual_update, supply_subproblem, DualState, ZoneBounds, ZoneGrid, ZoneProblem, ZoneSolution};
use super::SolverConfig;
use crate::behavior::supply_hours;
use crate::numerics::SquareMatrix;
use crate::policy::ChargePolicy;
use crate::scenario::Instance;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedSolution {
    pub r: Vec<f64>,
    #[serde(rename = "N_I")]
    pub n_idle: Vec<f64>,
    pub q: f64,
    #[serde(rename = "N_C")]
    pub n_c: f64,
    /// Smallest Lagrangian value seen; an upper bound on the relaxed optimum at this `N_C`.
    #[serde(rename = "R_bar")]
    pub r_bar: f64,
    pub dual_feasible: bool,
    pub duals: DualState,
    pub iterations: usize,
    /// Relaxed objective at the returned primal.
    pub primal_value: f64,
    /// Relative violations of the supply and congested-count constraints at the returned primal.
    pub supply_violation: f64,
    pub nc_violation: f64,
    /// Dual loop stopped early because the bound fell below a known value.
    pub pruned: bool,
}

/// A candidate primal used to keep the bound honest at a known point.
#[derive(Debug, Clone)]
pub(crate) struct Seed {
    pub r: Vec<f64>,
    pub n_idle: Vec<f64>,
    pub q: f64,
}

/// Dual iterations without a decrease of the dual value before the loop stops.
const STALL_ITERS: usize = 30;

pub(crate) struct Relaxation<'a> {
    pub inst: &'a Instance,
    pc: SquareMatrix,
    pub bounds: ZoneBounds,
    pub q_lo: f64,
    pub q_hi: f64,
    config: &'a SolverConfig,
    scale: f64,
    /// Upper limits on |delta| and |kappa|; any dual point gives a bound, so
    /// the box only keeps the iterates away from useless regions.
    dual_box: (f64, f64),
}

/// Per-coordinate step length for the dual loop. Uses the secant slope of
/// the constraint residual when it is monotone, and halves otherwise.
struct StepControl {
    gamma: f64,
    lo: f64,
    hi: f64,
    prev: Option<(f64, f64)>,
}

impl StepControl {
    fn new(g0: f64) -> Self {
        Self { gamma: g0, lo: g0 * 1e-9, hi: g0 * 1e4, prev: None }
    }

    fn next(&mut self, x: f64, s: f64) -> f64 {
        if let Some((xp, sp)) = self.prev {
            let (dx, ds) = (x - xp, s - sp);
            if dx == 0.0 {
                self.gamma *= 2.0;
            } else if dx * ds > 0.0 {
                let sec = dx / ds;
                self.gamma = if s * sp < 0.0 { sec } else { sec.min(4.0 * self.gamma) };
            } else {
                self.gamma *= 0.5;
            }
        }
        self.gamma = self.gamma.clamp(self.lo, self.hi);
        self.prev = Some((x, s));
        self.gamma
    }
}

struct Iterate {
    zones: Vec<ZoneSolution>,
    q: f64,
    g: f64,
    s1: f64,
    s2: f64,
}

impl<'a> Relaxation<'a> {
    pub fn new(inst: &'a Instance, policy: &ChargePolicy, config: &'a SolverConfig) -> Self {
        let p = inst.params();
        let (q_lo, q_hi) = config.q_range(p);
        let bounds = ZoneBounds {
            r_lo: config.r_bracket[0],
            r_hi: config.r_bracket[1],
            n_lo: p.min_idle(),
            n_hi: supply_hours(q_hi, p).max(p.min_idle() * 2.0),
        };
        let cap = 60.0 * bounds.r_hi.max(1.0) + q_hi;
        Self { inst, pc: policy.passenger_charges(), bounds, q_lo, q_hi, config, scale: 1e4 / p.n0, dual_box: (cap, cap) }
    }

    pub fn problems(&self, n_c: f64) -> Vec<ZoneProblem> {
        (0..self.inst.m()).map(|i| ZoneProblem::new(self.inst, self.pc.row(i), i, n_c, self.bounds)).collect()
    }

    /// Relaxed objective of a primal point at a fixed `N_C`.
    pub fn objective(&self, zones: &[ZoneSolution], q: f64) -> f64 {
        zones.iter().map(|z| z.revenue).sum::<f64>() - supply_hours(q, self.inst.params()) * q
    }

    fn assemble(&self, zones: Vec<ZoneSolution>, q: f64, d: DualState, n_c: f64) -> Iterate {
        let supply = supply_hours(q, self.inst.params());
        let g = zones.iter().map(|z| z.value).sum::<f64>() + supply * (d.delta - q) + d.kappa * n_c;
        let s1 = supply - zones.iter().map(|z| z.hours).sum::<f64>();
        let s2 = n_c - zones.iter().map(|z| z.nc_hours).sum::<f64>();
        Iterate { zones, q, g, s1, s2 }
    }

    fn solution(
        &self,
        it: &Iterate,
        n_c: f64,
        r_bar: f64,
        d: DualState,
        iterations: usize,
        feasible: bool,
        pruned: bool,
    ) -> RelaxedSolution {
        let supply = supply_hours(it.q, self.inst.params());
        RelaxedSolution {
            r: it.zones.iter().map(|z| z.r).collect(),
            n_idle: it.zones.iter().map(|z| z.n_idle).collect(),
            q: it.q,
            n_c,
            r_bar,
            dual_feasible: feasible,
            duals: d,
            iterations,
            primal_value: self.objective(&it.zones, it.q),
            supply_violation: it.s1.abs() / supply.max(1.0),
            nc_violation: it.s2.abs() / n_c.max(1.0),
            pruned,
        }
    }

    /// Subgradient loop at fixed `n_c`. Stops when the constraints hold to
    /// `dual_tol`, the steps collapse, the bound drops below `incumbent`, or
    /// the iteration cap is hit.
    pub fn run(&self, n_c: f64, start: DualState, incumbent: f64) -> RelaxedSolution {
        let cfg = self.config;
        let probs = self.problems(n_c);
        let grids: Vec<ZoneGrid> = probs.iter().map(|p| p.grid(cfg.coarse_grid_points, cfg.coarse_grid_points)).collect();
        let cell = (
            2.0 * (self.bounds.r_hi - self.bounds.r_lo) / (cfg.coarse_grid_points - 1) as f64,
            2.0 * (self.bounds.n_hi / self.bounds.n_lo).ln() / (cfg.coarse_grid_points - 1) as f64,
        );
        let p = self.inst.params();
        let mut d = start;
        let g0 = (cfg.gamma1 * self.scale, cfg.gamma2 * self.scale);
        let mut steps;
        let mut step_d = StepControl::new(g0.0);
        let mut step_k = StepControl::new(g0.1);
        let mut pinned = 0;
        let mut collapsed = 0;
        let mut prev: Option<Vec<ZoneSolution>> = None;
        let mut best: Option<(Iterate, DualState)> = None;
        let mut feasible: Option<(Iterate, DualState)> = None;
        let mut pruned_at: Option<f64> = None;
        let mut next_check = 0;
        let mut last_gain = 0;
        let mut iterations = 0;
        for k in 0..cfg.max_dual_iters.max(1) {
            iterations = k + 1;
            // global scan each time; the polished previous maximizer wins
            // ties so the primal moves continuously when it can
            let zones: Vec<ZoneSolution> = probs
                .par_iter()
                .zip(grids.par_iter())
                .enumerate()
                .map(|(i, (pr, g))| {
                    let local = prev.as_ref().map(|pz| pr.polish(pz[i].r, pz[i].n_idle.ln(), cell.0, cell.1, d, 2));
                    let (v, r, y) = pr.scan(g, d);
                    match local {
                        Some(l) if l.value >= v => l,
                        _ => pr.polish(r, y, g.r_step(), g.y_step(), d, 3),
                    }
                })
                .collect();
            prev = Some(zones.clone());
            let q = supply_subproblem(d.delta, p, self.q_lo, self.q_hi);
            let it = self.assemble(zones, q, d, n_c);
            let supply = supply_hours(q, p);
            let ok = it.s1.abs() <= cfg.dual_tol * supply.max(1.0) && it.s2.abs() <= cfg.dual_tol * n_c.max(1.0);
            let g = it.g;
            let (s1, s2) = (it.s1, it.s2);
            if ok {
                feasible = Some((it, d));
                if best.as_ref().is_none_or(|(b, _)| g < b.g) {
                    let (f, fd) = feasible.as_ref().unwrap();
                    best = Some((Iterate { zones: f.zones.clone(), q: f.q, g: f.g, s1: f.s1, s2: f.s2 }, *fd));
                }
                break;
            }
            if best.as_ref().is_none_or(|(b, _)| g < b.g - 1e-7 * b.g.abs()) {
                last_gain = k;
            }
            if best.as_ref().is_none_or(|(b, _)| g < b.g) {
                best = Some((it, d));
            }
            // the dual function has flattened out: a duality gap or a jump in the primal response
            if k > last_gain + STALL_ITERS {
                break;
            }
            // coarse values can sit below the true dual function, so the
            // pruning test is repeated on the fine grid
            if g < incumbent - 1e-4 * incumbent.abs() && k >= next_check {
                next_check = k + 25;
                let fine = self.dual_value(n_c, d, None).0;
                if fine < incumbent - 1e-4 * incumbent.abs() {
                    pruned_at = Some(fine);
                    break;
                }
            }
            steps = (step_d.next(d.delta, s1), step_k.next(d.kappa, s2));
            // a congested count that cannot be met pins kappa to its box
            if d.kappa.abs() >= self.dual_box.1 && s2.signum() == -d.kappa.signum() {
                pinned += 1;
                if pinned > 20 {
                    break;
                }
            } else {
                pinned = 0;
            }
            if steps.0 <= step_d.lo && steps.1 <= step_k.lo {
                collapsed += 1;
                if collapsed > 20 {
                    break;
                }
            } else {
                collapsed = 0;
            }
            d = dual_update(d, s1, s2, steps);
            d.delta = d.delta.clamp(0.0, self.dual_box.0);
            d.kappa = d.kappa.clamp(-self.dual_box.1, self.dual_box.1);
        }
        let (bi, bd) = best.expect("at least one iteration");
        let pruned = pruned_at.is_some();
        // coarse until `certify_point` replaces it
        let r_bar = pruned_at.unwrap_or(bi.g);
        match feasible {
            Some((fi, fd)) => self.solution(&fi, n_c, r_bar, fd, iterations, true, pruned),
            None => self.solution(&bi, n_c, r_bar, bd, iterations, false, pruned),
        }
    }

    /// Lagrangian value at fixed duals on the fine grid. With a seed the
    /// zone and supply maxima are taken over the seed as well, so the result
    /// never falls below the Lagrangian at the seed.
    pub fn dual_value(&self, n_c: f64, d: DualState, seed: Option<&Seed>) -> (f64, Vec<ZoneSolution>, f64) {
        let cfg = self.config;
        let p = self.inst.params();
        let probs = self.problems(n_c);
        let zones: Vec<ZoneSolution> = probs
            .par_iter()
            .map(|pr| {
                let s = pr.solve_grid(&pr.grid(cfg.r_grid_points, cfg.ni_grid_points), d);
                match seed {
                    Some(sd) => {
                        let alt = pr.evaluate(sd.r[pr.zone], sd.n_idle[pr.zone], d);
                        if alt.value > s.value {
                            alt
                        } else {
                            s
                        }
                    }
                    None => s,
                }
            })
            .collect();
        let mut q = supply_subproblem(d.delta, p, self.q_lo, self.q_hi);
        if let Some(sd) = seed {
            let v = |q: f64| supply_hours(q, p) * (d.delta - q);
            if v(sd.q) > v(q) {
                q = sd.q;
            }
        }
        let it = self.assemble(zones, q, d, n_c);
        (it.g, it.zones, q)
    }

    /// Replaces a coarse bound by the fine-grid dual function at the
    /// returned duals.
    pub fn certify_point(&self, sol: &mut RelaxedSolution) {
        if !sol.pruned {
            sol.r_bar = self.dual_value(sol.n_c, sol.duals, None).0;
        }
    }

    /// Dual loop with a fine-grid bound.
    pub fn run_certified(&self, n_c: f64, start: DualState, incumbent: f64) -> RelaxedSolution {
        let mut sol = self.run(n_c, start, incumbent);
        self.certify_point(&mut sol);
        sol
    }

    /// Bound at `n_c` seeded with a known primal. Runs the dual loop and
    /// evaluates the seeded Lagrangian at every visited dual point; the
    /// minimum is returned.
    pub fn certify(&self, n_c: f64, start: DualState, seed: &Seed) -> f64 {
        let sol = self.run(n_c, start, f64::NEG_INFINITY);
        let a = self.dual_value(n_c, sol.duals, Some(seed)).0;
        let b = self.dual_value(n_c, start, Some(seed)).0;
        a.min(b)
    }
}
