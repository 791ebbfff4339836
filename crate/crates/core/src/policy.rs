//! Congestion-charge schemes, profit accounting and welfare metrics.

use crate::behavior::{supply_hours, BehaviorParams};
use crate::equilibrium::{MarketState, PricingDecision};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::{softplus, SquareMatrix};
use crate::scenario::Instance;
use crate::solver::{solve, SolverConfig, SolverReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeKind {
    None,
    CordonIn,
    CordonBoth,
    TripBased,
}

impl ChargeKind {
    pub const ALL: [ChargeKind; 4] = [ChargeKind::None, ChargeKind::CordonIn, ChargeKind::CordonBoth, ChargeKind::TripBased];
    pub const CHARGED: [ChargeKind; 3] = [ChargeKind::CordonIn, ChargeKind::CordonBoth, ChargeKind::TripBased];

    pub fn as_str(self) -> &'static str {
        match self {
            ChargeKind::None => "none",
            ChargeKind::CordonIn => "cordon_in",
            ChargeKind::CordonBoth => "cordon_both",
            ChargeKind::TripBased => "trip_based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChargePolicy {
    pub kind: ChargeKind,
    /// Uniform charge level, $.
    pub level: f64,
    pub ind_p: Vec<Vec<bool>>,
    pub ind_d: Vec<Vec<bool>>,
    #[serde(skip)]
    weights: Option<SquareMatrix>,
}

/// Passenger-side and driver-side boolean matrices.
pub type Indicators = (Vec<Vec<bool>>, Vec<Vec<bool>>);

/// Passenger- and driver-side indicator matrices of a charge scheme.
pub fn indicator_matrices(kind: ChargeKind, congested: &[bool]) -> Result<Indicators> {
    let m = congested.len();
    let fill = |f: &dyn Fn(usize, usize) -> bool| -> Vec<Vec<bool>> { (0..m).map(|i| (0..m).map(|j| f(i, j)).collect()).collect() };
    let cordon = matches!(kind, ChargeKind::CordonIn | ChargeKind::CordonBoth);
    if cordon && (!congested.iter().any(|&c| c) || congested.iter().all(|&c| c)) {
        return Err(Error::EmptyCordonSet);
    }
    Ok(match kind {
        ChargeKind::None => (fill(&|_, _| false), fill(&|_, _| false)),
        ChargeKind::CordonIn => {
            let f = fill(&|i, j| !congested[i] && congested[j]);
            (f.clone(), f)
        }
        ChargeKind::CordonBoth => {
            let f = fill(&|i, j| congested[i] != congested[j]);
            (f.clone(), f)
        }
        ChargeKind::TripBased => (fill(&|_, _| true), fill(&|_, _| false)),
    })
}

impl ChargePolicy {
    pub fn none(m: usize) -> Self {
        let f = vec![vec![false; m]; m];
        Self { kind: ChargeKind::None, level: 0.0, ind_p: f.clone(), ind_d: f, weights: None }
    }

    pub fn new(kind: ChargeKind, level: f64, network: &Network) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::InvalidArgument("level must be nonnegative".into()));
        }
        let congested: Vec<bool> = network.zones().iter().map(|z| z.is_congested).collect();
        let (ind_p, ind_d) = indicator_matrices(kind, &congested)?;
        let level = if kind == ChargeKind::None { 0.0 } else { level };
        Ok(Self { kind, level, ind_p, ind_d, weights: None })
    }

    /// Policy on `inst`, picking up any per-pair charge weights.
    pub fn for_instance(kind: ChargeKind, level: f64, inst: &Instance) -> Result<Self> {
        let mut p = Self::new(kind, level, &inst.network)?;
        p.weights = inst.scenario.charge_weights.clone();
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.ind_p.len()
    }

    fn charge(&self, ind: &[Vec<bool>], i: usize, j: usize) -> f64 {
        if !ind[i][j] {
            return 0.0;
        }
        self.level * self.weights.as_ref().map_or(1.0, |w| w[(i, j)])
    }

    /// Charge paid by a passenger travelling from `i` to `j`, $.
    pub fn passenger_charge(&self, i: usize, j: usize) -> f64 {
        self.charge(&self.ind_p, i, j)
    }

    /// Charge paid by a driver repositioning from `i` to `j`, $.
    pub fn driver_charge(&self, i: usize, j: usize) -> f64 {
        self.charge(&self.ind_d, i, j)
    }

    pub fn passenger_charges(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.m(), |i, j| self.passenger_charge(i, j))
    }

    pub fn driver_charges(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.m(), |i, j| self.driver_charge(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub passenger_surplus: f64,
    pub driver_surplus: f64,
    pub platform_profit: f64,
    pub tax_revenue: f64,
}

fn fare_revenue(decision: &PricingDecision, state: &MarketState) -> f64 {
    let m = decision.r.len();
    let mut rev = 0.0;
    for i in 0..m {
        let s: f64 = state.lambda.row(i).iter().zip(state.t.row(i)).map(|(l, t)| l * t).sum();
        rev += decision.r[i] * s;
    }
    60.0 * rev
}

fn driver_charge_outlay(state: &MarketState, policy: &ChargePolicy) -> f64 {
    let m = policy.m();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            let c = policy.driver_charge(i, j);
            if c != 0.0 {
                s += state.flows.f_tilde[(i, j)] * c;
            }
        }
    }
    60.0 * s
}

/// Platform profit in $/hr: fares minus the wage bill minus driver-side
/// charges on realized repositioning flows.
pub fn profit(decision: &PricingDecision, state: &MarketState, policy: &ChargePolicy) -> f64 {
    fare_revenue(decision, state) - state.n_supply * decision.q - driver_charge_outlay(state, policy)
}

/// Driver surplus at wage `q`, $/hr.
pub fn driver_surplus(q: f64, params: &BehaviorParams) -> f64 {
    let s = params.sigma_s;
    params.n0 / s * (softplus(s * (q - params.q0)) - softplus(-s * params.q0))
}

pub fn welfare(state: &MarketState, decision: &PricingDecision, policy: &ChargePolicy, inst: &Instance) -> WelfareReport {
    let p = inst.params();
    let m = inst.m();
    let mut ps = 0.0;
    let mut tax = 0.0;
    for i in 0..m {
        for j in 0..m {
            let l0 = inst.lambda0()[(i, j)];
            let pc = policy.passenger_charge(i, j);
            if l0 > 0.0 {
                let c = p.alpha * state.w_p[i] + (p.beta + decision.r[i]) * state.t[(i, j)] + pc;
                ps += l0 / p.epsilon * softplus(p.epsilon * (inst.c0[(i, j)] - c));
            }
            tax += state.lambda[(i, j)] * pc;
        }
    }
    tax = 60.0 * tax + driver_charge_outlay(state, policy);
    debug_assert!(supply_hours(decision.q, p).is_finite());
    WelfareReport {
        passenger_surplus: 60.0 * ps,
        driver_surplus: driver_surplus(decision.q, p),
        platform_profit: profit(decision, state, policy),
        tax_revenue: tax,
    }
}

/// Trip counts, fares and pickup times aggregated over the congested area
/// (index 1) and the remote area (index 2). Trips are per minute; fares in $
/// per trip, excluding charges; waits in minutes, demand weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub lambda_11: f64,
    pub lambda_12: f64,
    pub lambda_21: f64,
    pub lambda_22: f64,
    pub fare_1: f64,
    pub fare_2: f64,
    pub wait_1: f64,
    pub wait_2: f64,
}

pub fn area_summary(state: &MarketState, decision: &PricingDecision, network: &Network) -> AreaSummary {
    let m = network.len();
    let mut lam = [[0.0; 2]; 2];
    let mut fare = [0.0; 2];
    let mut wait = [0.0; 2];
    for i in 0..m {
        let a = usize::from(!network.is_congested(i));
        for j in 0..m {
            let b = usize::from(!network.is_congested(j));
            let l = state.lambda[(i, j)];
            lam[a][b] += l;
            fare[a] += l * decision.r[i] * state.t[(i, j)];
            wait[a] += l * state.w_p[i];
        }
    }
    let per = |x: f64, a: usize| {
        let n = lam[a][0] + lam[a][1];
        if n > 0.0 {
            x / n
        } else {
            0.0
        }
    };
    AreaSummary {
        lambda_11: lam[0][0],
        lambda_12: lam[0][1],
        lambda_21: lam[1][0],
        lambda_22: lam[1][1],
        fare_1: per(fare[0], 0),
        fare_2: per(fare[1], 1),
        wait_1: per(wait[0], 0),
        wait_2: per(wait[1], 1),
    }
}

/// Metric a charge level is calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Reduction in congested-area vehicles relative to no charge.
    NcReduction(f64),
    /// Tax revenue, $/hr.
    Revenue(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetResult {
    pub kind: ChargeKind,
    pub level: f64,
    pub achieved: f64,
    pub report: SolverReport,
}

/// Upper end of the default level bracket, $.
pub const LEVEL_MAX: f64 = 10.0;
const LEVEL_TOL: f64 = 1e-3;
const PROBES: usize = 5;
/// Relative miss on the target metric accepted by the level search.
const GOAL_RTOL: f64 = 1e-4;
const MAX_SEARCH: usize = 40;

fn metric(target: Target, report: &SolverReport, baseline_nc: f64) -> f64 {
    match target {
        Target::NcReduction(_) => baseline_nc - report.state.n_c,
        Target::Revenue(_) => report.welfare.tax_revenue,
    }
}

/// Searches the charge level until the chosen metric hits the target.
pub fn find_charge_for_target(inst: &Instance, kind: ChargeKind, target: Target, config: &SolverConfig) -> Result<TargetResult> {
    find_charge_in_bracket(inst, kind, target, config, LEVEL_MAX)
}

pub fn find_charge_in_bracket(
    inst: &Instance,
    kind: ChargeKind,
    target: Target,
    config: &SolverConfig,
    level_max: f64,
) -> Result<TargetResult> {
    let goal = match target {
        Target::NcReduction(v) | Target::Revenue(v) => v,
    };
    if !goal.is_finite() {
        return Err(Error::InvalidArgument("target must be finite".into()));
    }
    let run = |level: f64| -> Result<SolverReport> { solve(inst, &ChargePolicy::for_instance(kind, level, inst)?, config) };
    let base = run(0.0)?;
    let baseline_nc = base.state.n_c;
    if goal == 0.0 {
        return Ok(TargetResult { kind, level: 0.0, achieved: 0.0, report: base });
    }
    if kind == ChargeKind::None {
        return Err(Error::TargetOutOfRange { target: goal, low: 0.0, high: 0.0 });
    }
    // Probe upward until the goal is crossed. Revenue eventually falls with
    // the level, so only the part of the curve below the crossing has to be
    // increasing; the smallest level that meets the goal is returned.
    let levels: Vec<f64> = (0..PROBES).map(|k| level_max * k as f64 / (PROBES - 1) as f64).collect();
    let mut values = vec![metric(target, &base, baseline_nc)];
    let mut reports = vec![base];
    for &lv in &levels[1..] {
        if values.last().is_some_and(|&v| v >= goal) {
            break;
        }
        let rep = run(lv)?;
        values.push(metric(target, &rep, baseline_nc));
        reports.push(rep);
    }
    let slack = 1e-9 * values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if values.windows(2).any(|w| w[1] < w[0] - slack) {
        return Err(Error::NonMonotoneTarget { levels: levels[..values.len()].to_vec() });
    }
    let (low, high) = (values[0], values[values.len() - 1]);
    if goal < low || goal > high {
        return Err(Error::TargetOutOfRange { target: goal, low, high });
    }
    let k = values.len() - 1;
    let (mut lo, mut hi) = (levels[k - 1], levels[k]);
    let (mut f_lo, mut f_hi) = (values[k - 1] - goal, values[k] - goal);
    let mut best = TargetResult { kind, level: hi, achieved: values[k], report: reports.swap_remove(k) };
    if f_hi == 0.0 {
        return Ok(best);
    }
    // Illinois variant of regula falsi: the metrics are close to linear in
    // the level, so this needs far fewer solves than bisection.
    let tol = GOAL_RTOL * goal.abs().max(1.0);
    let mut side = 0i8;
    for _ in 0..MAX_SEARCH {
        if hi - lo <= LEVEL_TOL {
            break;
        }
        let mut x = hi - f_hi * (hi - lo) / (f_hi - f_lo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let rep = run(x)?;
        let v = metric(target, &rep, baseline_nc);
        let f = v - goal;
        if f.abs() < (best.achieved - goal).abs() {
            best = TargetResult { kind, level: x, achieved: v, report: rep };
        }
        if f.abs() <= tol {
            break;
        }
        if f > 0.0 {
            hi = x;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
    }
    Ok(best)
}
