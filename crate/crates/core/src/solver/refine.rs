//! Local improvement of the full problem over fares and wage, with the
//! equilibrium enforced by solving it at every trial point.

use super::SolverConfig;
use crate::equilibrium::{solve_engine, Engine, EquilibriumGuess, MarketState, PricingDecision, Snapshot};
use crate::error::{Error, Result};
use crate::policy::ChargePolicy;
use crate::scenario::Instance;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Weight on squared pickup-time excess, $/hr per min².
const WAIT_PENALTY: f64 = 1e5;
const Q_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct RefineOutcome {
    pub decision: PricingDecision,
    pub state: MarketState,
    pub profit: f64,
    pub iterations: usize,
    pub equilibrium_solves: usize,
    pub trace: Vec<f64>,
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    y: Vec<f64>,
    nc: f64,
    value: f64,
}

struct Refiner<'a> {
    inst: &'a Instance,
    policy: &'a ChargePolicy,
    config: &'a SolverConfig,
    lo: Vec<f64>,
    hi: Vec<f64>,
    solves: usize,
}

fn decision_of(x: &[f64]) -> PricingDecision {
    let m = x.len() - 1;
    PricingDecision { r: x[..m].to_vec(), q: x[m] }
}

impl<'a> Refiner<'a> {
    fn penalized(&self, engine: &Engine, s: &Snapshot) -> f64 {
        let w_max = self.inst.params().w_max;
        let pen: f64 = s.w_p.iter().zip(0..).filter(|&(_, i)| s.lambda.row_sum(i) > 0.0).map(|(&w, _)| (w - w_max).max(0.0).powi(2)).sum();
        engine.profit(s) - WAIT_PENALTY * pen
    }

    fn solve_at(&mut self, x: &[f64], warm: Option<(&[f64], f64)>) -> Result<Point> {
        let decision = decision_of(x);
        let engine = Engine::new(self.inst, self.policy, &decision)?;
        let guess = warm.map(|(y, nc)| EquilibriumGuess { n_idle: y.iter().map(|v| v.exp()).collect(), n_c: nc });
        self.solves += 1;
        let (state, _) = solve_engine(&engine, &self.config.eq, guess.as_ref()).map_err(|e| e.with_decision(&decision))?;
        let y: Vec<f64> = state.n_idle.iter().map(|n| n.ln()).collect();
        let (_, snap) = engine.eval_y(&y, state.n_c, false);
        let value = self.penalized(&engine, &snap);
        Ok(Point { x: x.to_vec(), y, nc: state.n_c, value })
    }

    /// Gradient of the penalized profit along the equilibrium manifold,
    /// by the adjoint of the residual map.
    fn gradient(&self, pt: &Point) -> Option<Vec<f64>> {
        let m = pt.y.len();
        let n = pt.x.len();
        let decision = decision_of(&pt.x);
        let engine = Engine::new(self.inst, self.policy, &decision).ok()?;
        let eval = |e: &Engine, y: &[f64]| {
            let (f, s) = e.eval_y(y, pt.nc, false);
            (f, self.penalized(e, &s))
        };
        let mut fy = DMatrix::<f64>::zeros(m, m);
        let mut py = DVector::<f64>::zeros(m);
        for k in 0..m {
            let h = 1e-5;
            let mut a = pt.y.clone();
            let mut b = pt.y.clone();
            a[k] += h;
            b[k] -= h;
            let (fa, pa) = eval(&engine, &a);
            let (fb, pb) = eval(&engine, &b);
            for r in 0..m {
                fy[(r, k)] = (fa[r] - fb[r]) / (2.0 * h);
            }
            py[k] = (pa - pb) / (2.0 * h);
        }
        let mu = fy.transpose().lu().solve(&py)?;
        let mut grad = vec![0.0; n];
        for k in 0..n {
            let h = 1e-6 * pt.x[k].abs().max(1.0);
            let mut xa = pt.x.clone();
            let mut xb = pt.x.clone();
            xa[k] += h;
            xb[k] = (xb[k] - h).max(0.0);
            let span = xa[k] - xb[k];
            let ea = Engine::new(self.inst, self.policy, &decision_of(&xa)).ok()?;
            let eb = Engine::new(self.inst, self.policy, &decision_of(&xb)).ok()?;
            let (fa, pa) = eval(&ea, &pt.y);
            let (fb, pb) = eval(&eb, &pt.y);
            let fx: f64 = (0..m).map(|r| mu[r] * (fa[r] - fb[r])).sum();
            grad[k] = (pa - pb - fx) / span;
        }
        grad.iter().all(|g| g.is_finite()).then_some(grad)
    }

    fn project(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[k], self.hi[k]);
        }
    }

    fn scale(&self, k: usize) -> f64 {
        if k + 1 == self.lo.len() {
            Q_SCALE
        } else {
            1.0
        }
    }

    /// Projected quasi-Newton ascent in scaled coordinates.
    fn bfgs(&mut self, start: Point, trace: &mut Vec<f64>) -> (Point, usize) {
        let n = start.x.len();
        let tol = self.config.refine_tol;
        let mut cur = start;
        let Some(mut g) = self.gradient(&cur) else { return (cur, 0) };
        let mut h = DMatrix::<f64>::identity(n, n);
        let mut fresh = true;
        let mut iters = 0;
        let mut quiet = 0;
        while iters < self.config.max_refine_iters {
            iters += 1;
            // gradient in scaled coordinates z = x / s
            let gz: Vec<f64> = (0..n).map(|k| g[k] * self.scale(k)).collect();
            let free: Vec<bool> =
                (0..n).map(|k| !((cur.x[k] <= self.lo[k] && gz[k] < 0.0) || (cur.x[k] >= self.hi[k] && gz[k] > 0.0))).collect();
            let gmax = (0..n).filter(|&k| free[k]).map(|k| gz[k].abs()).fold(0.0, f64::max);
            if gmax == 0.0 {
                break;
            }
            if fresh {
                h = DMatrix::identity(n, n) * (0.1 / gmax);
            }
            let gv = DVector::from_iterator(n, (0..n).map(|k| if free[k] { gz[k] } else { 0.0 }));
            let mut dz = &h * &gv;
            for k in 0..n {
                if !free[k] {
                    dz[k] = 0.0;
                }
            }
            if dz.dot(&gv) <= 0.0 {
                h = DMatrix::identity(n, n) * (0.1 / gmax);
                dz = &h * &gv;
            }
            let mut a = 1.0;
            let mut next = None;
            while a > 1e-6 {
                let mut x: Vec<f64> = (0..n).map(|k| cur.x[k] + a * dz[k] * self.scale(k)).collect();
                self.project(&mut x);
                let predicted: f64 = (0..n).map(|k| g[k] * (x[k] - cur.x[k])).sum();
                if predicted <= 0.0 {
                    break;
                }
                if let Ok(p) = self.solve_at(&x, Some((&cur.y, cur.nc))) {
                    if p.value >= cur.value + 1e-4 * predicted {
                        next = Some(p);
                        break;
                    }
                }
                a *= 0.5;
            }
            let Some(p) = next else {
                if fresh {
                    break;
                }
                fresh = true;
                continue;
            };
            let Some(g_new) = self.gradient(&p) else {
                cur = p;
                trace.push(cur.value);
                break;
            };
            let gain = (p.value - cur.value) / cur.value.abs().max(1.0);
            // BFGS update for the minimization of -value in scaled coordinates
            let s = DVector::from_iterator(n, (0..n).map(|k| (p.x[k] - cur.x[k]) / self.scale(k)));
            let yv = DVector::from_iterator(n, (0..n).map(|k| -(g_new[k] - g[k]) * self.scale(k)));
            let sy = s.dot(&yv);
            if sy > 1e-12 * s.norm() * yv.norm() {
                let rho = 1.0 / sy;
                let i = DMatrix::<f64>::identity(n, n);
                let a1 = &i - &s * yv.transpose() * rho;
                let a2 = &i - &yv * s.transpose() * rho;
                h = &a1 * &h * &a2 + &s * s.transpose() * rho;
                fresh = false;
            }
            cur = p;
            g = g_new;
            trace.push(cur.value);
            if gain < tol {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        (cur, iters)
    }

    /// One sweep of single-coordinate probes.
    fn coordinate_polish(&mut self, mut cur: Point, trace: &mut Vec<f64>) -> Point {
        let n = cur.x.len();
        for k in 0..n {
            let step = if k + 1 == n { 0.05 } else { 0.005 };
            for dir in [1.0, -1.0] {
                let mut x = cur.x.clone();
                x[k] += dir * step;
                self.project(&mut x);
                if x[k] == cur.x[k] {
                    continue;
                }
                if let Ok(p) = self.solve_at(&x, Some((&cur.y, cur.nc))) {
                    if p.value > cur.value {
                        cur = p;
                        trace.push(cur.value);
                        break;
                    }
                }
            }
        }
        cur
    }

    fn violates_cap(&self, pt: &Point) -> bool {
        let p = self.inst.params();
        let l0 = self.inst.lambda0();
        pt.y.iter().enumerate().any(|(i, y)| l0.row_sum(i) > 0.0 && p.l / (0.5 * y).exp() > p.w_max * (1.0 + 1e-9))
    }

    /// Raises the wage until every zone meets the pickup-time cap.
    fn restore_cap(&mut self, cur: Point) -> Result<Point> {
        if !self.violates_cap(&cur) {
            return Ok(cur);
        }
        let n = cur.x.len();
        let mut hi_x = cur.x.clone();
        hi_x[n - 1] = self.hi[n - 1];
        let hi_pt = self.solve_at(&hi_x, Some((&cur.y, cur.nc)))?;
        if self.violates_cap(&hi_pt) {
            return Err(Error::InfeasibleWaitCap(format!("pickup time exceeds the cap even at wage {}", self.hi[n - 1])));
        }
        let (mut lo, mut hi) = (cur, hi_pt);
        for _ in 0..60 {
            if hi.x[n - 1] - lo.x[n - 1] < 1e-9 {
                break;
            }
            let mut x = lo.x.clone();
            x[n - 1] = 0.5 * (lo.x[n - 1] + hi.x[n - 1]);
            let mid = self.solve_at(&x, Some((&hi.y, hi.nc)))?;
            if self.violates_cap(&mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// Improves `start` locally. The equilibrium at each trial point is warm
/// started from the previous accepted point.
pub fn refine(
    inst: &Instance,
    policy: &ChargePolicy,
    start: &PricingDecision,
    guess: Option<&EquilibriumGuess>,
    config: &SolverConfig,
) -> Result<RefineOutcome> {
    let m = inst.m();
    start.validate(m)?;
    let (q_lo, q_hi) = config.q_range(inst.params());
    let mut lo = vec![config.r_bracket[0]; m];
    let mut hi = vec![config.r_bracket[1]; m];
    lo.push(q_lo);
    hi.push(q_hi);
    let mut rf = Refiner { inst, policy, config, lo, hi, solves: 0 };
    let mut x0: Vec<f64> = start.r.clone();
    x0.push(start.q);
    rf.project(&mut x0);
    let warm: Option<(Vec<f64>, f64)> = guess.map(|g| (g.n_idle.iter().map(|n| n.max(1e-300).ln()).collect(), g.n_c));
    let p0 = match rf.solve_at(&x0, warm.as_ref().map(|(y, nc)| (y.as_slice(), *nc))) {
        Ok(p) => p,
        Err(_) => rf.solve_at(&x0, None)?,
    };
    let mut trace = vec![p0.value];
    let (p1, iterations) = rf.bfgs(p0, &mut trace);
    let p2 = rf.coordinate_polish(p1, &mut trace);
    let fin = rf.restore_cap(p2)?;
    let decision = decision_of(&fin.x);
    let engine = Engine::new(inst, policy, &decision)?;
    let (_, snap) = engine.eval_y(&fin.y, fin.nc, false);
    let profit = engine.profit(&snap);
    let state = engine.to_state(snap);
    Ok(RefineOutcome { decision, state, profit, iterations, equilibrium_solves: rf.solves, trace })
}
