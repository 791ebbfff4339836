//! Per-zone and supply subproblems of the dualized relaxed program.

use crate::behavior::{supply_hours, BehaviorParams};
use crate::numerics::{golden_max, linspace};
use crate::scenario::Instance;
use serde::{Deserialize, Serialize};

/// Multipliers on the supply and congested-count constraints, $/hr per vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub delta: f64,
    pub kappa: f64,
}

/// Subgradient step: `delta -= g1 * supply_surplus`, `kappa -= g2 * nc_surplus`.
pub fn dual_update(duals: DualState, supply_surplus: f64, nc_surplus: f64, steps: (f64, f64)) -> DualState {
    DualState { delta: duals.delta - steps.0 * supply_surplus, kappa: duals.kappa - steps.1 * nc_surplus }
}

/// Box for the zone decision variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneBounds {
    pub r_lo: f64,
    pub r_hi: f64,
    pub n_lo: f64,
    pub n_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoneSolution {
    pub r: f64,
    #[serde(rename = "N_I")]
    pub n_idle: f64,
    /// Lagrangian contribution of the zone, $/hr.
    pub value: f64,
    /// Fare revenue, $/hr.
    pub revenue: f64,
    /// Vehicle-hours used by the zone: occupied + pickup + idle.
    pub hours: f64,
    /// Vehicle-hours the zone places in the congested area.
    pub nc_hours: f64,
}

/// Decomposed Lagrangian of one zone at a fixed congested count.
#[derive(Debug, Clone)]
pub struct ZoneProblem {
    pub zone: usize,
    pub core: bool,
    l0: Vec<f64>,
    t: Vec<f64>,
    tc: Vec<f64>,
    /// `exp(eps * (beta t + charge - c0))` per destination.
    base_exp: Vec<f64>,
    eps: f64,
    alpha: f64,
    l: f64,
    pub bounds: ZoneBounds,
}

/// Precomputed tables for the exhaustive scan.
#[derive(Debug, Clone)]
pub struct ZoneGrid {
    r: Vec<f64>,
    y: Vec<f64>,
    n: Vec<f64>,
    wp: Vec<f64>,
    w_exp: Vec<f64>,
    /// `base_exp * exp(eps r t)`, row per fare point.
    rt_exp: Vec<f64>,
}

impl ZoneGrid {
    pub fn r_step(&self) -> f64 {
        self.r.get(1).map_or(0.0, |x| x - self.r[0])
    }

    pub fn y_step(&self) -> f64 {
        self.y.get(1).map_or(0.0, |x| x - self.y[0])
    }
}

impl ZoneProblem {
    /// Builds the problem for zone `zone` given trip times `t_row` (min) at
    /// the current congested count `n_c`.
    pub fn new(inst: &Instance, passenger_charge: &[f64], zone: usize, n_c: f64, bounds: ZoneBounds) -> Self {
        let p = inst.params();
        let m = inst.m();
        let v_c = crate::behavior::congestion_speed(n_c, p);
        let t: Vec<f64> = (0..m).map(|j| 60.0 * (inst.trip_dc[(zone, j)] / v_c + inst.trip_dr[(zone, j)] / p.vr)).collect();
        let tc: Vec<f64> = (0..m).map(|j| 60.0 * inst.trip_dc[(zone, j)] / v_c).collect();
        Self::from_rows(
            inst.lambda0().row(zone).to_vec(),
            t,
            tc,
            passenger_charge,
            inst.c0.row(zone),
            zone,
            inst.is_congested(zone),
            p,
            bounds,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_rows(
        l0: Vec<f64>,
        t: Vec<f64>,
        tc: Vec<f64>,
        passenger_charge: &[f64],
        c0: &[f64],
        zone: usize,
        core: bool,
        p: &BehaviorParams,
        bounds: ZoneBounds,
    ) -> Self {
        let base_exp = (0..l0.len()).map(|j| (p.epsilon * (p.beta * t[j] + passenger_charge[j] - c0[j])).exp()).collect();
        Self { zone, core, l0, t, tc, base_exp, eps: p.epsilon, alpha: p.alpha, l: p.l, bounds }
    }

    fn has_demand(&self) -> bool {
        self.l0.iter().any(|&x| x > 0.0)
    }

    fn kc(&self, d: DualState) -> f64 {
        if self.core {
            d.kappa
        } else {
            0.0
        }
    }

    /// Full accounting at `(r, n_idle)`.
    pub fn evaluate(&self, r: f64, n_idle: f64, d: DualState) -> ZoneSolution {
        let wp = self.l / n_idle.sqrt();
        let w_exp = (self.eps * self.alpha * wp).exp();
        let kc = self.kc(d);
        let (mut rev, mut occ, mut lam_sum, mut in_c) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..self.l0.len() {
            if self.l0[j] == 0.0 {
                continue;
            }
            let lam = self.l0[j] / (1.0 + self.base_exp[j] * (self.eps * r * self.t[j]).exp() * w_exp);
            rev += lam * self.t[j];
            occ += lam * self.t[j];
            lam_sum += lam;
            in_c += lam * self.tc[j];
        }
        let revenue = 60.0 * r * rev;
        let hours = occ + wp * lam_sum + n_idle;
        let nc_hours = in_c + if self.core { wp * lam_sum + n_idle } else { 0.0 };
        let value = revenue - d.delta * hours - d.kappa * in_c - kc * (wp * lam_sum + n_idle);
        ZoneSolution { r, n_idle, value, revenue, hours, nc_hours }
    }

    /// Lagrangian value at `(r, ln n_idle)`.
    pub fn value(&self, r: f64, y: f64, d: DualState) -> f64 {
        self.evaluate(r, y.exp(), d).value
    }

    pub fn grid(&self, r_points: usize, n_points: usize) -> ZoneGrid {
        let b = self.bounds;
        let r = linspace(b.r_lo, b.r_hi, r_points.max(2));
        let y = linspace(b.n_lo.ln(), b.n_hi.ln(), n_points.max(2));
        let n: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let wp: Vec<f64> = n.iter().map(|v| self.l / v.sqrt()).collect();
        let w_exp = wp.iter().map(|w| (self.eps * self.alpha * w).exp()).collect();
        let m = self.l0.len();
        let mut rt_exp = Vec::with_capacity(r.len() * m);
        for &ra in &r {
            for j in 0..m {
                rt_exp.push(self.base_exp[j] * (self.eps * ra * self.t[j]).exp());
            }
        }
        ZoneGrid { r, y, n, wp, w_exp, rt_exp }
    }

    fn degenerate(&self, d: DualState) -> ZoneSolution {
        let b = self.bounds;
        let coef = d.delta + self.kc(d);
        let n = if coef >= 0.0 { b.n_lo } else { b.n_hi };
        self.evaluate(0.5 * (b.r_lo + b.r_hi), n, d)
    }

    /// Exhaustive scan over `grid` followed by coordinate-wise golden refinement.
    pub fn solve_grid(&self, grid: &ZoneGrid, d: DualState) -> ZoneSolution {
        if !self.has_demand() {
            return self.degenerate(d);
        }
        let (_, r, y) = self.scan(grid, d);
        self.polish(r, y, grid.r_step(), grid.y_step(), d, 3)
    }

    /// Best grid point as `(value, r, ln n_idle)`, without refinement.
    pub fn scan(&self, grid: &ZoneGrid, d: DualState) -> (f64, f64, f64) {
        if !self.has_demand() {
            let z = self.degenerate(d);
            return (z.value, z.r, z.n_idle.ln());
        }
        let m = self.l0.len();
        let kc = self.kc(d);
        let active: Vec<usize> = (0..m).filter(|&j| self.l0[j] > 0.0).collect();
        let mut coef = vec![0.0; active.len()];
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (a, &ra) in grid.r.iter().enumerate() {
            for (k, &j) in active.iter().enumerate() {
                coef[k] = 60.0 * ra * self.t[j] - d.delta * self.t[j] - d.kappa * self.tc[j];
            }
            let row = &grid.rt_exp[a * m..(a + 1) * m];
            for b in 0..grid.n.len() {
                let we = grid.w_exp[b];
                let (mut s1, mut s0) = (0.0, 0.0);
                for (k, &j) in active.iter().enumerate() {
                    let lam = self.l0[j] / (1.0 + row[j] * we);
                    s1 += lam * coef[k];
                    s0 += lam;
                }
                let v = s1 - (d.delta + kc) * (grid.wp[b] * s0 + grid.n[b]);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        (best.0, grid.r[best.1], grid.y[best.2])
    }

    /// Local coordinate-wise golden refinement around `(r, y)`.
    pub fn polish(&self, r: f64, y: f64, dr: f64, dy: f64, d: DualState, rounds: usize) -> ZoneSolution {
        if !self.has_demand() {
            return self.degenerate(d);
        }
        let b = self.bounds;
        let (y_lo, y_hi) = (b.n_lo.ln(), b.n_hi.ln());
        let (mut r, mut y) = (r.clamp(b.r_lo, b.r_hi), y.clamp(y_lo, y_hi));
        let mut v = self.value(r, y, d);
        let (mut dr, mut dy) = (dr, dy);
        for _ in 0..rounds {
            let (rn, vn) = golden_max(|x| self.value(x, y, d), (r - dr).max(b.r_lo), (r + dr).min(b.r_hi), 1e-7, 40);
            if vn > v {
                r = rn;
                v = vn;
            }
            let (yn, vn) = golden_max(|x| self.value(r, x, d), (y - dy).max(y_lo), (y + dy).min(y_hi), 1e-7, 40);
            if vn > v {
                y = yn;
                v = vn;
            }
            dr *= 0.5;
            dy *= 0.5;
        }
        self.evaluate(r, y.exp(), d)
    }
}

/// Wage maximizing `N0 F(q) (delta - q)` on `[q_lo, q_hi]`.
pub fn supply_subproblem(delta: f64, params: &BehaviorParams, q_lo: f64, q_hi: f64) -> f64 {
    let obj = |q: f64| supply_hours(q, params) * (delta - q);
    let grid = linspace(q_lo, q_hi, 201);
    let mut k = 0;
    for (i, &q) in grid.iter().enumerate() {
        if obj(q) > obj(grid[k]) {
            k = i;
        }
    }
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(grid.len() - 1)];
    let (q, v) = golden_max(obj, a, b, 1e-10, 100);
    if v > obj(grid[k]) {
        q
    } else {
        grid[k]
    }
}
