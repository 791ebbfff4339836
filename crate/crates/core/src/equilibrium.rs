//! Market equilibrium for given fares and wage: driver waits, demand,
//! congestion and rebalancing flows.
//!
//! The unknowns are the idle counts `N_I` (in log coordinates); the driver
//! waits follow from Little's law. The congested-area count is solved as an
//! inner fixed point for every outer iterate unless joint mode is enabled.

use crate::behavior::supply_hours;
use crate::error::{Error, Result};
use crate::numerics::{max_abs, SquareMatrix};
use crate::policy::ChargePolicy;
use crate::repositioning::{intended_flows, realized_flows, repositioning_probs, zone_earnings, FlowMatrices};
use crate::scenario::Instance;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingDecision {
    /// Per-minute fare by origin zone, $/min.
    pub r: Vec<f64>,
    /// Driver wage, $/hr.
    pub q: f64,
}

impl PricingDecision {
    pub fn uniform(m: usize, r: f64, q: f64) -> Self {
        Self { r: vec![r; m], q }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.r.len() != m {
            return Err(Error::InvalidArgument(format!("fare vector has {} entries for {m} zones", self.r.len())));
        }
        if self.r.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::NegativeInput("fare"));
        }
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(Error::NegativeInput("wage"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarketState {
    /// Realized demand, trips/min.
    pub lambda: SquareMatrix,
    pub w_p: Vec<f64>,
    pub w_d: Vec<f64>,
    #[serde(rename = "N_I")]
    pub n_idle: Vec<f64>,
    pub t: SquareMatrix,
    #[serde(rename = "N_C")]
    pub n_c: f64,
    pub v_c: f64,
    pub flows: FlowMatrices,
    /// Vehicle-hours in use: occupied + pickup + idle.
    #[serde(rename = "N_total")]
    pub n_total: f64,
    pub occupied_hours: f64,
    pub pickup_hours: f64,
    pub idle_hours: f64,
    /// Vehicle-hours supplied at the current wage.
    #[serde(rename = "N_supply")]
    pub n_supply: f64,
    /// Congested-area count implied by the state (equal to `n_c` at a fixed point).
    #[serde(rename = "N_C_implied")]
    pub n_c_implied: f64,
    pub wait_cap_violated: bool,
}

impl MarketState {
    pub fn m(&self) -> usize {
        self.w_p.len()
    }

    /// Trips/min out of each zone.
    pub fn outflow(&self, i: usize) -> f64 {
        self.lambda.row_sum(i)
    }

    pub fn residuals(&self) -> ResidualVector {
        ResidualVector {
            supply_residual: self.n_supply - self.n_total,
            nc_residual: self.n_c - self.n_c_implied,
            balance_residuals: balance_residuals(&self.lambda, &self.flows.f_tilde),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualVector {
    pub supply_residual: f64,
    pub nc_residual: f64,
    pub balance_residuals: Vec<f64>,
}

impl ResidualVector {
    /// Largest residual after dropping the last balance equation.
    pub fn max_independent(&self) -> f64 {
        let b = &self.balance_residuals;
        let kept = &b[..b.len().saturating_sub(1)];
        max_abs(kept).max(self.supply_residual.abs()).max(self.nc_residual.abs())
    }
}

/// Inflow minus outflow of vehicles, per zone.
pub fn balance_residuals(lambda: &SquareMatrix, f_tilde: &SquareMatrix) -> Vec<f64> {
    let m = lambda.dim();
    (0..m)
        .map(|i| {
            let mut b = 0.0;
            for j in 0..m {
                if j != i {
                    b += lambda[(j, i)] + f_tilde[(j, i)] - lambda[(i, j)] - f_tilde[(i, j)];
                }
            }
            b
        })
        .collect()
}

/// Walras closure: flows are conserved row by row and the balance
/// residuals sum to zero.
pub fn walras_check(state: &MarketState) -> bool {
    let m = state.m();
    let f = &state.flows;
    let scale = f.f.total().abs().max(state.lambda.total()).max(1.0);
    for i in 0..m {
        if (f.f_tilde.row_sum(i) - f.f.row_sum(i)).abs() > 1e-9 * scale {
            return false;
        }
    }
    let sum: f64 = balance_residuals(&state.lambda, &f.f_tilde).iter().sum();
    sum.abs() <= (m as f64) * 64.0 * f64::EPSILON * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    /// Convergence tolerance on the scaled residuals.
    pub eq_tol: f64,
    /// Newton keeps polishing towards this level once `eq_tol` is met.
    pub polish_tol: f64,
    pub max_outer: usize,
    pub fd_step: f64,
    /// Solve the congested-area count jointly with the idle counts.
    pub joint_nc: bool,
    /// Initial driver wait when no warm start is given, min.
    pub initial_wait: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self { eq_tol: 1e-8, polish_tol: 1e-13, max_outer: 500, fd_step: 1e-6, joint_nc: false, initial_wait: 5.0 }
    }
}

/// Warm start for the equilibrium solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumGuess {
    #[serde(rename = "N_I")]
    pub n_idle: Vec<f64>,
    #[serde(rename = "N_C")]
    pub n_c: f64,
}

impl EquilibriumGuess {
    pub fn from_state(state: &MarketState) -> Self {
        Self { n_idle: state.n_idle.clone(), n_c: state.n_c }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumDiagnostics {
    pub iterations: usize,
    pub fixed_point_iterations: usize,
    pub residual: f64,
    pub initial_guess: EquilibriumGuess,
}

const Y_MIN: f64 = -30.0;
/// Uniform driver waits (min) tried when the first start fails.
const RESTART_WAITS: &[f64] = &[20.0, 1.0, 60.0];

/// Evaluation kernel for one pricing decision.
pub(crate) struct Engine<'a> {
    pub inst: &'a Instance,
    pub m: usize,
    pub r: Vec<f64>,
    pub q: f64,
    pub supply: f64,
    dc: SquareMatrix,
    /// `c - c0` at zero pickup time and `N_C = 0`.
    k0: SquareMatrix,
    /// Slope of `c - c0` in `N_C`.
    k1: SquareMatrix,
    /// Minutes inside the congested area per trip at `N_C = 0`, and its slope.
    tc0: SquareMatrix,
    tc1: SquareMatrix,
    /// Remote-area minutes per trip.
    tr: SquareMatrix,
    y_max: f64,
    demand_scale: f64,
}

/// Everything derived from a set of idle counts and a congested count.
pub(crate) struct Snapshot {
    pub n_idle: Vec<f64>,
    pub n_c: f64,
    pub v_c: f64,
    pub t: SquareMatrix,
    pub lambda: SquareMatrix,
    pub w_p: Vec<f64>,
    pub w_d: Vec<f64>,
    pub flows: FlowMatrices,
    pub occupied: f64,
    pub pickup: f64,
    pub idle: f64,
    pub nc_implied: f64,
}

impl<'a> Engine<'a> {
    pub fn new(inst: &'a Instance, policy: &ChargePolicy, decision: &PricingDecision) -> Result<Self> {
        let m = inst.m();
        decision.validate(m)?;
        if policy.m() != m {
            return Err(Error::InvalidArgument("policy and scenario sizes differ".into()));
        }
        let p = inst.params();
        let pc = policy.passenger_charges();
        let dc = policy.driver_charges();
        let tc0 = SquareMatrix::from_fn(m, |i, j| 60.0 * inst.trip_dc[(i, j)] / p.vc0);
        let tc1 = SquareMatrix::from_fn(m, |i, j| 60.0 * inst.trip_dc[(i, j)] * p.rho);
        let tr = SquareMatrix::from_fn(m, |i, j| 60.0 * inst.trip_dr[(i, j)] / p.vr);
        let k0 = SquareMatrix::from_fn(m, |i, j| (p.beta + decision.r[i]) * (tc0[(i, j)] + tr[(i, j)]) + pc[(i, j)] - inst.c0[(i, j)]);
        let k1 = SquareMatrix::from_fn(m, |i, j| (p.beta + decision.r[i]) * tc1[(i, j)]);
        Ok(Self {
            inst,
            m,
            r: decision.r.clone(),
            q: decision.q,
            supply: supply_hours(decision.q, p),
            dc,
            k0,
            k1,
            tc0,
            tc1,
            tr,
            y_max: (p.n0 * 10.0).ln(),
            demand_scale: inst.lambda0().total().max(1e-300),
        })
    }

    fn l0(&self, i: usize, j: usize) -> f64 {
        self.inst.lambda0()[(i, j)]
    }

    #[inline]
    fn lam(&self, i: usize, j: usize, wp_term: f64, n_c: f64) -> f64 {
        let l0 = self.l0(i, j);
        if l0 == 0.0 {
            return 0.0;
        }
        let x = self.inst.params().epsilon * (wp_term + self.k0[(i, j)] + self.k1[(i, j)] * n_c);
        if x > 700.0 {
            0.0
        } else {
            l0 / (1.0 + x.exp())
        }
    }

    fn pickup(&self, n_idle: f64) -> f64 {
        if n_idle > 0.0 {
            self.inst.params().l / n_idle.sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Congested-count map `G(N_C)` and its derivative for fixed idle counts.
    fn nc_map(&self, n_idle: &[f64], w_p: &[f64], n_c: f64) -> (f64, f64) {
        let p = self.inst.params();
        let mut g = 0.0;
        let mut dg = 0.0;
        for i in 0..self.m {
            let core = self.inst.is_congested(i);
            let wp_term = p.alpha * w_p[i];
            let mut out = 0.0;
            for j in 0..self.m {
                let l = self.lam(i, j, wp_term, n_c);
                if l == 0.0 {
                    continue;
                }
                out += l;
                let tc = self.tc0[(i, j)] + self.tc1[(i, j)] * n_c;
                let dl = -p.epsilon * l * (1.0 - l / self.l0(i, j)) * self.k1[(i, j)];
                g += l * tc;
                dg += l * self.tc1[(i, j)] + dl * (tc + if core { w_p[i] } else { 0.0 });
            }
            if core {
                g += if out > 0.0 { w_p[i] * out } else { 0.0 } + n_idle[i];
            }
        }
        (g, dg)
    }

    /// Fixed point of the congested-area count for given idle counts.
    pub fn solve_nc(&self, n_idle: &[f64], guess: f64) -> f64 {
        if !self.inst.network.zones().iter().any(|z| z.is_congested) {
            return 0.0;
        }
        let w_p: Vec<f64> = n_idle.iter().map(|&n| self.pickup(n)).collect();
        let h = |x: f64| {
            let (g, dg) = self.nc_map(n_idle, &w_p, x);
            (x - g, 1.0 - dg)
        };
        let mut x = guess.max(0.0);
        // safeguarded Newton
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        for _ in 0..100 {
            let (hx, dh) = h(x);
            if hx == 0.0 {
                return x;
            }
            if hx < 0.0 {
                lo = x;
            } else {
                hi = hi.min(x);
            }
            let mut next = if dh > 0.0 { x - hx / dh } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(1.0) };
            }
            if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
                return next;
            }
            x = next;
        }
        x
    }

    /// Builds the full state for given idle counts and congested count.
    pub fn snapshot(&self, n_idle: &[f64], n_c: f64) -> Snapshot {
        let p = self.inst.params();
        let m = self.m;
        let v_c = crate::behavior::congestion_speed(n_c, p);
        let t = SquareMatrix::from_fn(m, |i, j| self.tc0[(i, j)] + self.tc1[(i, j)] * n_c + self.tr[(i, j)]);
        let w_p: Vec<f64> = n_idle.iter().map(|&n| self.pickup(n)).collect();
        let mut lambda = SquareMatrix::zeros(m);
        let (mut occupied, mut pickup, mut idle, mut nc_implied) = (0.0, 0.0, 0.0, 0.0);
        let mut w_d = vec![0.0; m];
        for i in 0..m {
            let core = self.inst.is_congested(i);
            let wp_term = p.alpha * w_p[i];
            let mut out = 0.0;
            for j in 0..m {
                let l = self.lam(i, j, wp_term, n_c);
                lambda[(i, j)] = l;
                out += l;
                occupied += l * t[(i, j)];
                nc_implied += l * (self.tc0[(i, j)] + self.tc1[(i, j)] * n_c);
            }
            let pk = if out > 0.0 { w_p[i] * out } else { 0.0 };
            pickup += pk;
            idle += n_idle[i];
            if core {
                nc_implied += pk + n_idle[i];
            }
            w_d[i] = if out > 0.0 { n_idle[i] / out } else { f64::INFINITY };
        }
        let flows = self.flows(&lambda, &t, &w_d, v_c);
        Snapshot { n_idle: n_idle.to_vec(), n_c, v_c, t, lambda, w_p, w_d, flows, occupied, pickup, idle, nc_implied }
    }

    fn flows(&self, lambda: &SquareMatrix, t: &SquareMatrix, w_d: &[f64], v_c: f64) -> FlowMatrices {
        let p = self.inst.params();
        let m = self.m;
        let zones = self.inst.network.zones();
        let sigma_z: Vec<f64> = (0..m)
            .map(|k| {
                let speed = if zones[k].is_congested { v_c } else { p.vr };
                let d = 60.0 * zones[k].traverse_distance / speed;
                if w_d[k].is_finite() {
                    -(-d / w_d[k]).exp_m1()
                } else {
                    0.0
                }
            })
            .collect();
        let earnings = zone_earnings(&self.r, lambda, t);
        // waits are capped so that zones without demand keep a finite utility
        let w_safe: Vec<f64> = w_d.iter().map(|&w| if w.is_finite() && w > 0.0 { w } else { 1e12 }).collect();
        let pm = repositioning_probs(&earnings, t, &w_safe, p.eta, &self.dc).expect("waits are positive");
        let f = intended_flows(&pm, lambda);
        let f_tilde = realized_flows(&f, &self.inst.paths, &sigma_z);
        FlowMatrices { p: pm, f, f_tilde, sigma_z }
    }

    pub fn to_state(&self, s: Snapshot) -> MarketState {
        let w_max = self.inst.params().w_max;
        let wait_cap_violated = (0..self.m).any(|i| s.lambda.row_sum(i) > 0.0 && s.w_p[i] > w_max * (1.0 + 1e-9));
        MarketState {
            n_total: s.occupied + s.pickup + s.idle,
            lambda: s.lambda,
            w_p: s.w_p,
            w_d: s.w_d,
            n_idle: s.n_idle,
            t: s.t,
            n_c: s.n_c,
            v_c: s.v_c,
            flows: s.flows,
            occupied_hours: s.occupied,
            pickup_hours: s.pickup,
            idle_hours: s.idle,
            n_supply: self.supply,
            n_c_implied: s.nc_implied,
            wait_cap_violated,
        }
    }

    /// Scaled residual vector: supply, then balance for zones `0..M-1`,
    /// then (joint mode) the congested-count equation.
    pub fn scaled_residuals(&self, s: &Snapshot, joint: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m + 1);
        let total = s.occupied + s.pickup + s.idle;
        out.push((self.supply - total) / self.supply.max(1e-300));
        let b = balance_residuals(&s.lambda, &s.flows.f_tilde);
        out.extend(b[..self.m - 1].iter().map(|x| x / self.demand_scale));
        if joint {
            out.push((s.n_c - s.nc_implied) / self.supply.max(1e-300));
        }
        out
    }

    pub fn eval_y(&self, y: &[f64], nc_guess: f64, joint: bool) -> (Vec<f64>, Snapshot) {
        let (ys, n_c) = if joint { (&y[..self.m], y[self.m].max(0.0)) } else { (y, f64::NAN) };
        let n_idle: Vec<f64> = ys.iter().map(|v| v.exp()).collect();
        let n_c = if joint { n_c } else { self.solve_nc(&n_idle, nc_guess) };
        let s = self.snapshot(&n_idle, n_c);
        (self.scaled_residuals(&s, joint), s)
    }

    /// Platform profit of a snapshot, $/hr.
    pub fn profit(&self, s: &Snapshot) -> f64 {
        let mut rev = 0.0;
        let mut outlay = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                rev += self.r[i] * s.lambda[(i, j)] * s.t[(i, j)];
                let c = self.dc[(i, j)];
                if c != 0.0 {
                    outlay += s.flows.f_tilde[(i, j)] * c;
                }
            }
        }
        60.0 * (rev - outlay) - self.supply * self.q
    }

    /// Largest root of `N = w_d * outflow(N)` for zone `i` at congested count `n_c`.
    pub fn idle_for_wait(&self, i: usize, w_d: f64, n_c: f64) -> f64 {
        let p = self.inst.params();
        let outflow = |n: f64| -> f64 {
            let wp_term = p.alpha * self.pickup(n);
            (0..self.m).map(|j| self.lam(i, j, wp_term, n_c)).sum()
        };
        let cap: f64 = self.inst.lambda0().row_sum(i) * w_d;
        if !(cap > 0.0) {
            return 0.0;
        }
        let phi = |n: f64| n - w_d * outflow(n);
        // scan downwards for a sign change; phi(cap) >= 0 always
        let mut hi = cap;
        let mut lo = cap;
        let mut found = false;
        for _ in 0..400 {
            lo = hi / 1.25;
            if phi(lo) < 0.0 {
                found = true;
                break;
            }
            hi = lo;
            if lo < 1e-12 {
                break;
            }
        }
        if !found {
            return 0.0;
        }
        crate::numerics::brent_root(phi, lo, hi, 1e-14 * hi, 200).unwrap_or(hi)
    }
}

fn validate_demand(inst: &Instance, require_rows: bool) -> Result<()> {
    let l0 = inst.lambda0();
    let m = inst.m();
    if l0.total() == 0.0 {
        return Ok(());
    }
    for i in 0..m {
        let out = l0.row_sum(i);
        if require_rows && out == 0.0 {
            return Err(Error::DegenerateDemand { zone: i });
        }
        if out == 0.0 && l0.col_sum(i) == 0.0 {
            return Err(Error::DegenerateDemand { zone: i });
        }
    }
    Ok(())
}

/// One forward pass from given driver waits and congested count.
pub fn evaluate_state(
    decision: &PricingDecision,
    policy: &ChargePolicy,
    inst: &Instance,
    w_d_guess: &[f64],
    n_c_guess: f64,
) -> Result<(MarketState, ResidualVector)> {
    let engine = Engine::new(inst, policy, decision)?;
    validate_demand(inst, false)?;
    if w_d_guess.len() != engine.m {
        return Err(Error::InvalidArgument("wait vector length differs from zone count".into()));
    }
    if let Some(&w) = w_d_guess.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::NonPositiveWait(w));
    }
    if !(n_c_guess >= 0.0) {
        return Err(Error::NegativeInput("congested vehicle count"));
    }
    let n_idle: Vec<f64> = (0..engine.m).map(|i| engine.idle_for_wait(i, w_d_guess[i], n_c_guess)).collect();
    let mut snap = engine.snapshot(&n_idle, n_c_guess);
    // report the requested waits where the zone has demand
    for i in 0..engine.m {
        if !snap.w_d[i].is_finite() {
            snap.w_d[i] = w_d_guess[i];
        }
    }
    let state = engine.to_state(snap);
    let res = state.residuals();
    Ok((state, res))
}

/// Equilibrium for a pricing decision, starting from the default guess.
pub fn solve_given_prices(
    decision: &PricingDecision,
    policy: &ChargePolicy,
    inst: &Instance,
    config: &EquilibriumConfig,
) -> Result<MarketState> {
    solve_from(decision, policy, inst, config, None).map(|(s, _)| s)
}

/// Equilibrium with an optional warm start; also returns diagnostics.
pub fn solve_from(
    decision: &PricingDecision,
    policy: &ChargePolicy,
    inst: &Instance,
    config: &EquilibriumConfig,
    guess: Option<&EquilibriumGuess>,
) -> Result<(MarketState, EquilibriumDiagnostics)> {
    let engine = Engine::new(inst, policy, decision)?;
    validate_demand(inst, true)?;
    if inst.lambda0().total() == 0.0 {
        return Err(Error::DegenerateDemand { zone: 0 });
    }
    let (state, diag) = solve_engine(&engine, config, guess).map_err(|e| e.with_decision(decision))?;
    Ok((state, diag))
}

pub(crate) fn initial_guess(engine: &Engine, config: &EquilibriumConfig) -> EquilibriumGuess {
    let n_idle: Vec<f64> =
        (0..engine.m).map(|i| engine.idle_for_wait(i, config.initial_wait, 0.0).max(engine.inst.params().min_idle())).collect();
    let n_c = engine.solve_nc(&n_idle, 0.0);
    EquilibriumGuess { n_idle, n_c }
}

pub(crate) fn solve_engine(
    engine: &Engine,
    config: &EquilibriumConfig,
    guess: Option<&EquilibriumGuess>,
) -> Result<(MarketState, EquilibriumDiagnostics)> {
    let guess = match guess {
        Some(g) if g.n_idle.len() == engine.m && g.n_idle.iter().all(|&n| n > 0.0 && n.is_finite()) => g.clone(),
        _ => initial_guess(engine, config),
    };
    let joint = config.joint_nc;
    let mut y0: Vec<f64> = guess.n_idle.iter().map(|n| n.ln().clamp(Y_MIN, engine.y_max)).collect();
    if joint {
        y0.push(guess.n_c.max(0.0));
    }
    let mut iterations = 0;
    let mut fp_iterations = 0;
    let mut best_res = f64::INFINITY;
    let finish = |y: &[f64], nc: f64, res: f64, iterations: usize, fp: usize| {
        let (_, snap) = engine.eval_y(y, nc, joint);
        let state = engine.to_state(snap);
        Ok((state, EquilibriumDiagnostics { iterations, fixed_point_iterations: fp, residual: res, initial_guess: guess.clone() }))
    };
    let mut starts = vec![(y0, guess.n_c)];
    // Newton can settle in a local minimum of the residual norm; other
    // uniform waits give independent starting points.
    for &w in RESTART_WAITS {
        let alt = initial_guess(engine, &EquilibriumConfig { initial_wait: w, ..*config });
        let mut y: Vec<f64> = alt.n_idle.iter().map(|n| n.ln().clamp(Y_MIN, engine.y_max)).collect();
        if joint {
            y.push(alt.n_c.max(0.0));
        }
        starts.push((y, alt.n_c));
    }
    for (k, (y0, nc0)) in starts.into_iter().enumerate() {
        // plain Newton
        let mut y = y0.clone();
        let mut nc = nc0;
        match newton(engine, config, &mut y, &mut nc, &mut iterations, joint, None, false) {
            Ok(res) => return finish(&y, nc, res, iterations, fp_iterations),
            Err(res) => best_res = best_res.min(res),
        }
        // Newton homotopy: solve F(y) = (1 - tau) F(y0) for tau -> 1
        let mut y = y0.clone();
        let mut nc = nc0;
        match homotopy(engine, config, &mut y, &mut nc, &mut iterations, joint) {
            Ok(res) => return finish(&y, nc, res, iterations, fp_iterations),
            Err(res) => best_res = best_res.min(res),
        }
        // relaxation sweeps, then Newton again
        let mut y = y0;
        let mut nc = nc0;
        for _ in 0..if k == 0 { 2 } else { 1 } {
            fp_iterations += anderson(engine, &mut y, &mut nc, joint, 200);
            match newton(engine, config, &mut y, &mut nc, &mut iterations, joint, None, false) {
                Ok(res) => return finish(&y, nc, res, iterations, fp_iterations),
                Err(res) => best_res = best_res.min(res),
            }
        }
        if iterations >= config.max_outer {
            break;
        }
    }
    Err(Error::NoEquilibriumFound { iterations, residual: best_res, decision: None })
}

fn homotopy(
    engine: &Engine,
    config: &EquilibriumConfig,
    y: &mut Vec<f64>,
    nc: &mut f64,
    iterations: &mut usize,
    joint: bool,
) -> std::result::Result<f64, f64> {
    let (f0, _) = engine.eval_y(y, *nc, joint);
    let mut tau = 0.0_f64;
    let mut dtau = 0.25_f64;
    let mut best = f64::INFINITY;
    while *iterations < config.max_outer {
        let t1 = (tau + dtau).min(1.0);
        let shift: Vec<f64> = f0.iter().map(|v| (1.0 - t1) * v).collect();
        let mut yt = y.clone();
        let mut nct = *nc;
        let last = t1 >= 1.0;
        let r = newton(engine, config, &mut yt, &mut nct, iterations, joint, (!last).then_some(shift.as_slice()), !last);
        match r {
            Ok(res) => {
                *y = yt;
                *nc = nct;
                if last {
                    return Ok(res);
                }
                tau = t1;
                dtau = (dtau * 1.5).min(0.5);
            }
            Err(res) => {
                best = best.min(res);
                dtau *= 0.5;
                if dtau < 1e-4 {
                    return Err(best);
                }
            }
        }
    }
    Err(best)
}

/// Damped Newton with a finite-difference Jacobian on `F(y) - shift`.
/// Returns the final residual norm, or the best norm reached on failure.
/// A `loose` solve stops at a coarse tolerance; it is used for the
/// intermediate stages of the homotopy.
#[allow(clippy::too_many_arguments)]
fn newton(
    engine: &Engine,
    config: &EquilibriumConfig,
    y: &mut [f64],
    nc: &mut f64,
    iterations: &mut usize,
    joint: bool,
    shift: Option<&[f64]>,
    loose: bool,
) -> std::result::Result<f64, f64> {
    let n = y.len();
    let (accept, target) = if loose { (1e-6, 1e-6) } else { (config.eq_tol, config.polish_tol) };
    let eval = |y: &[f64], nc: f64| {
        let (mut f, s) = engine.eval_y(y, nc, joint);
        if let Some(sh) = shift {
            for (a, b) in f.iter_mut().zip(sh) {
                *a -= b;
            }
        }
        (f, s.n_c)
    };
    let (mut f, n_c) = eval(y, *nc);
    *nc = n_c;
    let mut norm = max_abs(&f);
    loop {
        if norm <= target {
            return Ok(norm);
        }
        if *iterations >= config.max_outer {
            return if norm <= accept { Ok(norm) } else { Err(norm) };
        }
        *iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let h = config.fd_step * y[k].abs().max(1.0);
            let mut yk = y.to_vec();
            yk[k] += h;
            let (fk, _) = eval(&yk, *nc);
            for r in 0..n {
                jac[(r, k)] = (fk[r] - f[r]) / h;
            }
        }
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let Some(mut step) = jac.lu().solve(&rhs) else {
            return if norm <= accept { Ok(norm) } else { Err(norm) };
        };
        if !joint {
            for v in step.iter_mut() {
                *v = v.clamp(-3.0, 3.0);
            }
        }
        let l2 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut a = 1.0;
        let mut accepted = false;
        while a > 1e-10 {
            let trial: Vec<f64> = (0..n)
                .map(|k| {
                    let v = y[k] + a * step[k];
                    if joint && k == n - 1 {
                        v.max(0.0)
                    } else if k < engine.m {
                        v.clamp(Y_MIN, engine.y_max)
                    } else {
                        v
                    }
                })
                .collect();
            let (ft, nct) = eval(&trial, *nc);
            let l2t = ft.iter().map(|v| v * v).sum::<f64>().sqrt();
            if l2t.is_finite() && l2t < (1.0 - 1e-4 * a) * l2 {
                y.copy_from_slice(&trial);
                f = ft;
                *nc = nct;
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            return if norm <= accept { Ok(norm) } else { Err(norm) };
        }
        let new_norm = max_abs(&f);
        // once acceptable, stop when polishing no longer pays
        if norm <= accept && new_norm > 0.5 * norm {
            return Ok(new_norm.min(norm));
        }
        norm = new_norm;
    }
}

/// Anderson-accelerated relaxation on the idle counts. Returns the number
/// of iterations spent.
fn anderson(engine: &Engine, y: &mut [f64], nc: &mut f64, joint: bool, iters: usize) -> usize {
    const MEM: usize = 5;
    const TAU: f64 = 0.3;
    let m = engine.m;
    let n = y.len();
    let step = |y: &[f64], nc: f64| -> (Vec<f64>, f64) {
        let n_idle: Vec<f64> = y[..m].iter().map(|v| v.exp()).collect();
        let n_c = if joint { y[m].max(0.0) } else { engine.solve_nc(&n_idle, nc) };
        let s = engine.snapshot(&n_idle, n_c);
        let total = s.occupied + s.pickup + s.idle;
        let sr = (engine.supply - total) / engine.supply.max(1e-300);
        let b = balance_residuals(&s.lambda, &s.flows.f_tilde);
        let mut g = vec![0.0; n];
        for i in 0..m {
            let scale = s.lambda.row_sum(i) + s.lambda.col_sum(i) + 1e-9;
            g[i] = TAU * (b[i] / scale + sr);
        }
        if joint {
            g[m] = s.nc_implied - s.n_c;
        }
        (g, s.n_c)
    };
    let mut hist_x: Vec<Vec<f64>> = Vec::new();
    let mut hist_g: Vec<Vec<f64>> = Vec::new();
    for it in 0..iters {
        let (g, n_c) = step(y, *nc);
        *nc = n_c;
        if max_abs(&g) < 1e-12 {
            return it;
        }
        hist_x.push(y.to_vec());
        hist_g.push(g.clone());
        if hist_x.len() > MEM + 1 {
            hist_x.remove(0);
            hist_g.remove(0);
        }
        let mut next: Vec<f64> = (0..n).map(|k| y[k] + g[k]).collect();
        let k = hist_g.len();
        if k >= 2 {
            // least-squares combination of residual differences
            let cols = k - 1;
            let dg = DMatrix::from_fn(n, cols, |r, c| hist_g[c + 1][r] - hist_g[c][r]);
            let gv = DVector::from_column_slice(&g);
            if let Ok(gamma) = dg.clone().svd(true, true).solve(&gv, 1e-12) {
                for r in 0..n {
                    let mut corr = 0.0;
                    for c in 0..cols {
                        let dx = hist_x[c + 1][r] - hist_x[c][r];
                        corr += gamma[c] * (dx + dg[(r, c)]);
                    }
                    next[r] -= corr;
                }
            }
        }
        for (k, v) in next.iter_mut().enumerate() {
            if k < m {
                *v = v.clamp(Y_MIN, engine.y_max);
            } else {
                *v = v.max(0.0);
            }
        }
        y.copy_from_slice(&next);
    }
    iters
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::behavior::BehaviorParams;
    use crate::network::{Edge, Zone};
    use crate::scenario::{AltCost, Scenario};
    use approx::assert_relative_eq;

    pub(crate) fn one_zone(congested: bool) -> Instance {
        Scenario {
            zones: vec![Zone::new(0, congested, 1.0)],
            edges: vec![],
            lambda0: SquareMatrix::from_rows(&[vec![400.0]]).unwrap(),
            alt_cost: AltCost::PerMile { rate_per_mile: 12.0, underserved: vec![], markup: 1.5 },
            params: BehaviorParams::calibrated(),
            meta: Default::default(),
            charge_weights: None,
        }
        .instance()
        .unwrap()
    }

    pub(crate) fn two_zone_symmetric() -> Instance {
        Scenario {
            zones: vec![Zone::new(0, false, 1.2), Zone::new(1, false, 1.2)],
            edges: vec![Edge(0, 1, 2.5)],
            lambda0: SquareMatrix::from_rows(&[vec![200.0, 100.0], vec![100.0, 200.0]]).unwrap(),
            alt_cost: AltCost::PerMile { rate_per_mile: 12.0, underserved: vec![], markup: 1.5 },
            params: BehaviorParams::calibrated(),
            meta: Default::default(),
            charge_weights: None,
        }
        .instance()
        .unwrap()
    }

    #[test]
    fn one_zone_reduces_to_scalar_supply_equation() {
        let inst = one_zone(false);
        let pol = ChargePolicy::none(1);
        let d = PricingDecision::uniform(1, 1.5, 26.0);
        let s = solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()).unwrap();
        // hand algebra: one remote mile at 20 mph gives t = 3 min, c0 = 12 * 1 mile; N = lambda*(t + w_p) + N_I
        let p = inst.params();
        let t = 3.0;
        let wp = p.l / s.n_idle[0].sqrt();
        let c = p.alpha * wp + (p.beta + 1.5) * t;
        let lam = 400.0 / (1.0 + (p.epsilon * (c - 12.0)).exp());
        assert_relative_eq!(s.lambda[(0, 0)], lam, max_relative = 1e-12);
        assert_relative_eq!(lam * (t + wp) + s.n_idle[0], supply_hours(26.0, p), max_relative = 1e-10);
    }

    #[test]
    fn symmetric_two_zone_has_equal_waits() {
        let inst = two_zone_symmetric();
        let pol = ChargePolicy::none(2);
        let d = PricingDecision::uniform(2, 1.4, 27.0);
        let s = solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()).unwrap();
        assert_relative_eq!(s.w_d[0], s.w_d[1], max_relative = 1e-8);
        assert!(s.residuals().max_independent() < 1e-6);
        assert!(walras_check(&s));

        let (st, res) = evaluate_state(&d, &pol, &inst, &[3.0, 3.0], 0.0).unwrap();
        assert!(res.balance_residuals.iter().all(|b| b.abs() < 1e-9));
        assert_relative_eq!(st.w_d[0], 3.0, max_relative = 1e-9);
    }

    #[test]
    fn zero_demand_state() {
        let mut sc = two_zone_symmetric().scenario;
        sc.lambda0 = SquareMatrix::zeros(2);
        let inst = sc.instance().unwrap();
        let pol = ChargePolicy::none(2);
        let d = PricingDecision::uniform(2, 1.0, 25.0);
        let (st, res) = evaluate_state(&d, &pol, &inst, &[2.0, 2.0], 0.0).unwrap();
        assert!(res.balance_residuals.iter().all(|&b| b == 0.0));
        assert_relative_eq!(res.supply_residual, supply_hours(25.0, inst.params()));
        assert!(walras_check(&st));
        assert!(matches!(solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()), Err(Error::DegenerateDemand { .. })));
    }

    #[test]
    fn walras_detects_broken_conservation() {
        let inst = two_zone_symmetric();
        let pol = ChargePolicy::none(2);
        let d = PricingDecision::uniform(2, 1.4, 27.0);
        let mut s = solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()).unwrap();
        assert!(walras_check(&s));
        s.flows.f_tilde[(0, 1)] += 1.0;
        assert!(!walras_check(&s));
    }

    #[test]
    fn joint_mode_agrees_with_nested() {
        let inst = two_zone_symmetric();
        let pol = ChargePolicy::none(2);
        let d = PricingDecision { r: vec![1.2, 1.6], q: 28.0 };
        let a = solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()).unwrap();
        let cfg = EquilibriumConfig { joint_nc: true, ..Default::default() };
        let b = solve_given_prices(&d, &pol, &inst, &cfg).unwrap();
        for i in 0..2 {
            assert_relative_eq!(a.w_d[i], b.w_d[i], max_relative = 1e-7);
        }
    }
}
