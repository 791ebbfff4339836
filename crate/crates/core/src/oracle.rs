//! Brute-force references for networks of at most three zones.
//!
//! Nothing here calls the production solvers. The model formulas for
//! repositioning and interception are shared; demand, pickup times, the
//! congested-count fixed point, supply inversion and every search are coded
//! again from scratch.

use crate::behavior::congestion_speed;
use crate::equilibrium::PricingDecision;
use crate::error::{Error, Result};
use crate::numerics::SquareMatrix;
use crate::policy::ChargePolicy;
use crate::repositioning::{intended_flows, realized_flows, repositioning_probs, zone_earnings, zone_match_prob};
use crate::scenario::Instance;
use serde::Serialize;

pub const MAX_ZONES: usize = 3;

fn check_size(inst: &Instance) -> Result<()> {
    if inst.m() > MAX_ZONES {
        return Err(Error::TooLarge { zones: inst.m(), max: MAX_ZONES });
    }
    Ok(())
}

/// Plain bisection for a sign change of `f` on `[a, b]`.
fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let mut fa = f(a);
    for _ in 0..iters {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Smallest `x` with `h(x) >= 0`, for `h` negative at zero and eventually positive.
fn first_crossing(mut h: impl FnMut(f64) -> f64) -> f64 {
    if h(0.0) >= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while h(hi) < 0.0 && hi < 1e12 {
        hi *= 2.0;
    }
    bisect(h, 0.0, hi, 200)
}

/// Compass search with pattern moves (Hooke-Jeeves), maximizing `f` inside
/// the box.
fn pattern_search(mut f: impl FnMut(&[f64]) -> f64, x0: Vec<f64>, lo: &[f64], hi: &[f64], step0: f64, tol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for k in 0..n {
            x[k] = x[k].clamp(lo[k], hi[k]);
        }
    };
    let mut base = x0;
    clamp(&mut base);
    let mut fb = f(&base);
    let mut step = step0;
    let explore = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], fx: f64, step: f64| -> (Vec<f64>, f64) {
        let mut x = x.to_vec();
        let mut fx = fx;
        for k in 0..n {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step).clamp(lo[k], hi[k]);
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    break;
                }
            }
        }
        (x, fx)
    };
    let mut evals = 0usize;
    while step > tol && evals < 200_000 {
        evals += 1;
        let (x1, f1) = explore(&mut f, &base, fb, step);
        if f1 > fb {
            // keep moving along the improving direction while it pays
            let mut prev = base.clone();
            let (mut cur, mut fc) = (x1, f1);
            loop {
                let mut pat: Vec<f64> = (0..n).map(|k| 2.0 * cur[k] - prev[k]).collect();
                clamp(&mut pat);
                let fp = f(&pat);
                let (x2, f2) = explore(&mut f, &pat, fp, step);
                if f2 > fc {
                    prev = cur;
                    cur = x2;
                    fc = f2;
                } else {
                    break;
                }
            }
            base = cur;
            fb = fc;
        } else {
            step *= 0.5;
        }
    }
    (base, fb)
}

// ---------------------------------------------------------------- relaxed

/// Scan specification for the relaxed reference.
#[derive(Debug, Clone)]
pub struct RelaxedGrid {
    /// Points per zone for the fare and for the idle count.
    pub points: usize,
    pub r_range: (f64, f64),
    /// Idle-count range; defaults to the pickup-cap minimum up to `N0`.
    pub n_range: Option<(f64, f64)>,
    pub q_range: Option<(f64, f64)>,
    /// Follow the scan with a pattern search from the best grid point.
    pub polish: bool,
}

impl Default for RelaxedGrid {
    fn default() -> Self {
        Self { points: 9, r_range: (0.0, 6.0), n_range: None, q_range: None, polish: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedOptimum {
    pub r: Vec<f64>,
    pub n_idle: Vec<f64>,
    pub q: f64,
    pub n_c: f64,
    pub objective: f64,
}

struct RelaxedModel<'a> {
    inst: &'a Instance,
    pc: SquareMatrix,
    q_range: (f64, f64),
}

impl RelaxedModel<'_> {
    fn trip_time(&self, i: usize, j: usize, n_c: f64) -> (f64, f64) {
        let p = self.inst.params();
        let v_c = congestion_speed(n_c, p);
        let tc = 60.0 * self.inst.trip_dc[(i, j)] / v_c;
        (tc + 60.0 * self.inst.trip_dr[(i, j)] / p.vr, tc)
    }

    fn demand(&self, i: usize, j: usize, r: f64, w_p: f64, t: f64) -> f64 {
        let p = self.inst.params();
        let l0 = self.inst.lambda0()[(i, j)];
        if l0 == 0.0 {
            return 0.0;
        }
        let c = p.alpha * w_p + (p.beta + r) * t + self.pc[(i, j)];
        l0 / (1.0 + (p.epsilon * (c - self.inst.c0[(i, j)])).exp())
    }

    /// (revenue, hours, congested count implied) at a trial congested count.
    fn account(&self, r: &[f64], n_idle: &[f64], n_c: f64) -> (f64, f64, f64) {
        let p = self.inst.params();
        let m = self.inst.m();
        let (mut rev, mut hours, mut in_c) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let w_p = p.l / n_idle[i].sqrt();
            let mut out = 0.0;
            for j in 0..m {
                let (t, tc) = self.trip_time(i, j, n_c);
                let lam = self.demand(i, j, r[i], w_p, t);
                out += lam;
                rev += 60.0 * r[i] * lam * t;
                hours += lam * t;
                in_c += lam * tc;
            }
            hours += w_p * out + n_idle[i];
            if self.inst.is_congested(i) {
                in_c += w_p * out + n_idle[i];
            }
        }
        (rev, hours, in_c)
    }

    /// Objective with both equality constraints met exactly, or `None`.
    fn value(&self, r: &[f64], n_idle: &[f64]) -> Option<(f64, f64, f64)> {
        let p = self.inst.params();
        let has_core = (0..self.inst.m()).any(|i| self.inst.is_congested(i));
        let n_c = if has_core { first_crossing(|x| x - self.account(r, n_idle, x).2) } else { 0.0 };
        let (rev, hours, _) = self.account(r, n_idle, n_c);
        let share = hours / p.n0;
        if !(share > 0.0 && share < 1.0) {
            return None;
        }
        let q = p.q0 + (share / (1.0 - share)).ln() / p.sigma_s;
        if q < self.q_range.0 || q > self.q_range.1 {
            return None;
        }
        Some((rev - hours * q, q, n_c))
    }
}

fn odometer(counts: &[usize], mut visit: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; counts.len()];
    loop {
        visit(&idx);
        let mut k = 0;
        loop {
            if k == idx.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Exhaustive scan of the relaxed program over fares and idle counts, with
/// the wage and the congested count fixed by their equality constraints.
/// Returns `None` when no grid point is feasible.
pub fn brute_force_relaxed(inst: &Instance, policy: &ChargePolicy, grid: &RelaxedGrid) -> Result<Option<RelaxedOptimum>> {
    check_size(inst)?;
    let p = inst.params();
    let m = inst.m();
    let q_range = grid.q_range.unwrap_or((0.01, 3.0 * p.q0));
    let (n_lo, n_hi) = grid.n_range.unwrap_or((p.min_idle(), p.n0));
    let model = RelaxedModel { inst, pc: policy.passenger_charges(), q_range };
    let pts = grid.points.max(2);
    let r_axis: Vec<f64> = (0..pts).map(|k| grid.r_range.0 + (grid.r_range.1 - grid.r_range.0) * k as f64 / (pts - 1) as f64).collect();
    let y_axis: Vec<f64> = (0..pts).map(|k| n_lo.ln() + (n_hi / n_lo).ln() * k as f64 / (pts - 1) as f64).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    odometer(&vec![pts; 2 * m], |idx| {
        let r: Vec<f64> = idx[..m].iter().map(|&k| r_axis[k]).collect();
        let n: Vec<f64> = idx[m..].iter().map(|&k| y_axis[k].exp()).collect();
        if let Some((v, _, _)) = model.value(&r, &n) {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                let mut x = r;
                x.extend(idx[m..].iter().map(|&k| y_axis[k]));
                best = Some((x, v));
            }
        }
    });
    let Some((mut x, _)) = best else { return Ok(None) };
    let score = |x: &[f64]| {
        let n: Vec<f64> = x[m..].iter().map(|y| y.exp()).collect();
        model.value(&x[..m], &n).map_or(f64::NEG_INFINITY, |v| v.0)
    };
    if grid.polish {
        let mut lo = vec![grid.r_range.0; m];
        lo.extend(std::iter::repeat_n(n_lo.ln(), m));
        let mut hi = vec![grid.r_range.1; m];
        hi.extend(std::iter::repeat_n(n_hi.ln(), m));
        let step = (r_axis[1] - r_axis[0]).max(y_axis[1] - y_axis[0]);
        x = pattern_search(score, x, &lo, &hi, step, 1e-10).0;
    }
    let r = x[..m].to_vec();
    let n_idle: Vec<f64> = x[m..].iter().map(|y| y.exp()).collect();
    let (objective, q, n_c) = model.value(&r, &n_idle).expect("search keeps feasibility");
    Ok(Some(RelaxedOptimum { r, n_idle, q, n_c, objective }))
}

// ------------------------------------------------------------ equilibrium

struct EquilibriumModel<'a> {
    inst: &'a Instance,
    decision: &'a PricingDecision,
    pc: SquareMatrix,
    dc: SquareMatrix,
    has_core: bool,
}

/// Everything implied by a vector of driver waits.
struct WaitState {
    residual: Vec<f64>,
}

impl EquilibriumModel<'_> {
    fn times(&self, n_c: f64) -> (SquareMatrix, SquareMatrix) {
        let p = self.inst.params();
        let v_c = congestion_speed(n_c, p);
        let m = self.inst.m();
        let tc = SquareMatrix::from_fn(m, |i, j| 60.0 * self.inst.trip_dc[(i, j)] / v_c);
        let t = SquareMatrix::from_fn(m, |i, j| tc[(i, j)] + 60.0 * self.inst.trip_dr[(i, j)] / p.vr);
        (t, tc)
    }

    fn outflow_row(&self, i: usize, n_idle: f64, t: &SquareMatrix) -> Vec<f64> {
        let p = self.inst.params();
        let w_p = p.l / n_idle.sqrt();
        (0..self.inst.m())
            .map(|j| {
                let l0 = self.inst.lambda0()[(i, j)];
                if l0 == 0.0 {
                    return 0.0;
                }
                let c = p.alpha * w_p + (p.beta + self.decision.r[i]) * t[(i, j)] + self.pc[(i, j)];
                l0 / (1.0 + (p.epsilon * (c - self.inst.c0[(i, j)])).exp())
            })
            .collect()
    }

    /// Largest idle count consistent with Little's law at wait `w_d`.
    fn idle(&self, i: usize, w_d: f64, t: &SquareMatrix) -> f64 {
        let phi = |n: f64| n - w_d * self.outflow_row(i, n, t).iter().sum::<f64>();
        let cap = w_d * self.inst.lambda0().row_sum(i);
        // dense downward log scan for the first sign change below the cap
        let mut hi = cap;
        for k in 1..=2000 {
            let lo = cap * (-(k as f64) * 0.02).exp();
            if phi(lo) < 0.0 {
                return bisect(phi, lo, hi, 200);
            }
            hi = lo;
        }
        0.0
    }

    fn idle_all(&self, w_d: &[f64], n_c: f64) -> Vec<f64> {
        let (t, _) = self.times(n_c);
        (0..w_d.len()).map(|i| self.idle(i, w_d[i], &t)).collect()
    }

    fn implied_nc(&self, n_idle: &[f64], n_c: f64) -> f64 {
        let p = self.inst.params();
        let (t, tc) = self.times(n_c);
        let mut g = 0.0;
        for (i, &n) in n_idle.iter().enumerate() {
            let row = self.outflow_row(i, n.max(1e-300), &t);
            g += row.iter().zip(tc.row(i)).map(|(l, x)| l * x).sum::<f64>();
            if self.inst.is_congested(i) {
                g += p.l / n.max(1e-300).sqrt() * row.iter().sum::<f64>() + n;
            }
        }
        g
    }

    fn state(&self, w_d: &[f64]) -> WaitState {
        let p = self.inst.params();
        let m = self.inst.m();
        let n_c = if self.has_core { first_crossing(|x| x - self.implied_nc(&self.idle_all(w_d, x), x)) } else { 0.0 };
        let n_idle = self.idle_all(w_d, n_c);
        let (t, _) = self.times(n_c);
        let mut lambda = SquareMatrix::zeros(m);
        let mut hours = 0.0;
        for i in 0..m {
            let n = n_idle[i].max(1e-300);
            let row = self.outflow_row(i, n, &t);
            let out: f64 = row.iter().sum();
            for j in 0..m {
                lambda[(i, j)] = row[j];
                hours += row[j] * t[(i, j)];
            }
            hours += p.l / n.sqrt() * out + n_idle[i];
        }
        let zones = self.inst.network.zones();
        let v_c = congestion_speed(n_c, p);
        let sigma: Vec<f64> = (0..m)
            .map(|k| {
                let speed = if zones[k].is_congested { v_c } else { p.vr };
                zone_match_prob(60.0 * zones[k].traverse_distance / speed, w_d[k]).unwrap_or(0.0)
            })
            .collect();
        let earnings = zone_earnings(&self.decision.r, &lambda, &t);
        let probs = repositioning_probs(&earnings, &t, w_d, p.eta, &self.dc).expect("waits are positive");
        let f_tilde = realized_flows(&intended_flows(&probs, &lambda), &self.inst.paths, &sigma);
        let supply = p.n0 / (1.0 + (-p.sigma_s * (self.decision.q - p.q0)).exp());
        let scale = self.inst.lambda0().total();
        let mut residual = vec![(supply - hours) / supply];
        for i in 0..m {
            let mut b = 0.0;
            for j in 0..m {
                if j != i {
                    b += lambda[(j, i)] + f_tilde[(j, i)] - lambda[(i, j)] - f_tilde[(i, j)];
                }
            }
            residual.push(b / scale);
        }
        WaitState { residual }
    }
}

fn equilibrium_model<'a>(decision: &'a PricingDecision, policy: &ChargePolicy, inst: &'a Instance) -> Result<EquilibriumModel<'a>> {
    check_size(inst)?;
    decision.validate(inst.m())?;
    for i in 0..inst.m() {
        if inst.lambda0().row_sum(i) == 0.0 {
            return Err(Error::DegenerateDemand { zone: i });
        }
    }
    Ok(EquilibriumModel {
        inst,
        decision,
        pc: policy.passenger_charges(),
        dc: policy.driver_charges(),
        has_core: (0..inst.m()).any(|i| inst.is_congested(i)),
    })
}

/// Supply residual followed by every zone's balance residual, at the given
/// driver waits (minutes).
pub fn equilibrium_residual(decision: &PricingDecision, policy: &ChargePolicy, inst: &Instance, w_d: &[f64]) -> Result<Vec<f64>> {
    let model = equilibrium_model(decision, policy, inst)?;
    if w_d.len() != inst.m() || w_d.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument("one positive wait per zone is required".into()));
    }
    Ok(model.state(w_d).residual)
}

/// Driver waits at equilibrium, found by a log-spaced grid over the waits
/// followed by coordinate-wise pattern search on the residual norm.
pub fn brute_force_equilibrium(decision: &PricingDecision, policy: &ChargePolicy, inst: &Instance) -> Result<Vec<f64>> {
    let model = equilibrium_model(decision, policy, inst)?;
    let m = inst.m();
    let pts = match m {
        1 => 200,
        2 => 24,
        _ => 10,
    };
    let (lo, hi) = ((1e-2_f64).ln(), (1e2_f64).ln());
    let axis: Vec<f64> = (0..pts).map(|k| lo + (hi - lo) * k as f64 / (pts - 1) as f64).collect();
    let norm = |y: &[f64]| -> f64 {
        let w: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let r = model.state(&w).residual;
        let s: f64 = r.iter().map(|x| x * x).sum();
        if s.is_finite() {
            -s
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut best = (vec![axis[0]; m], f64::NEG_INFINITY);
    odometer(&vec![pts; m], |idx| {
        let y: Vec<f64> = idx.iter().map(|&k| axis[k]).collect();
        let v = norm(&y);
        if v > best.1 {
            best = (y, v);
        }
    });
    let (y, _) = pattern_search(norm, best.0, &vec![lo - 2.0; m], &vec![hi + 2.0; m], axis[1] - axis[0], 1e-9);
    Ok(y.iter().map(|v| v.exp()).collect())
}
