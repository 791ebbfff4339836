//! Small instances and the scenario suite shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfl_core::behavior::BehaviorParams;
use sfl_core::equilibrium::{solve_given_prices, walras_check, EquilibriumConfig, MarketState, PricingDecision};
use sfl_core::network::{Edge, Zone};
use sfl_core::numerics::max_abs;
use sfl_core::numerics::SquareMatrix;
use sfl_core::oracle::{brute_force_equilibrium, brute_force_relaxed, equilibrium_residual, RelaxedGrid};
use sfl_core::policy::{ChargeKind, ChargePolicy};
use sfl_core::scenario::{generate_synthetic, grid_preset, sf_like_preset, AltCost, GeneratorConfig, Instance, Scenario};
use sfl_core::solver::{solve_relaxed, SolverConfig};

pub fn scenario(zones: Vec<Zone>, edges: Vec<Edge>, lambda0: Vec<Vec<f64>>) -> Scenario {
    Scenario {
        zones,
        edges,
        lambda0: SquareMatrix::from_rows(&lambda0).unwrap(),
        alt_cost: AltCost::PerMile { rate_per_mile: 7.2, underserved: vec![], markup: 1.5 },
        params: BehaviorParams::calibrated(),
        meta: Default::default(),
        charge_weights: None,
    }
}

pub fn one_zone(congested: bool) -> Instance {
    scenario(vec![Zone::new(0, congested, 1.5)], vec![], vec![vec![300.0]]).instance().unwrap()
}

/// Zone 0 congested, zone 1 remote.
pub fn two_zone() -> Instance {
    scenario(vec![Zone::new(0, true, 1.0), Zone::new(1, false, 1.5)], vec![Edge(0, 1, 2.0)], vec![vec![150.0, 60.0], vec![80.0, 120.0]])
        .instance()
        .unwrap()
}

pub fn two_zone_symmetric() -> Instance {
    scenario(vec![Zone::new(0, false, 1.2), Zone::new(1, false, 1.2)], vec![Edge(0, 1, 2.5)], vec![vec![200.0, 100.0], vec![100.0, 200.0]])
        .instance()
        .unwrap()
}

/// Line 0 - 1 - 2 with the middle zone congested.
pub fn three_zone_line() -> Instance {
    scenario(
        vec![Zone::new(0, false, 1.5), Zone::new(1, true, 1.0), Zone::new(2, false, 1.5)],
        vec![Edge(0, 1, 1.8), Edge(1, 2, 2.2)],
        vec![vec![90.0, 70.0, 20.0], vec![60.0, 160.0, 50.0], vec![25.0, 80.0, 110.0]],
    )
    .instance()
    .unwrap()
}

/// Random connected 2- or 3-zone instance with at least one congested zone.
pub fn random_small(seed: u64, m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let core = rng.random_range(0..m);
    let zones: Vec<Zone> = (0..m).map(|i| Zone::new(i, i == core, rng.random_range(0.8..1.8))).collect();
    let mut edges: Vec<Edge> = (1..m).map(|i| Edge(i - 1, i, rng.random_range(1.0..3.0))).collect();
    if m == 3 && rng.random_bool(0.5) {
        edges.push(Edge(0, 2, rng.random_range(2.5..4.0)));
    }
    let lambda0: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(30.0..160.0)).collect()).collect();
    scenario(zones, edges, lambda0).instance().unwrap()
}

pub fn policy(inst: &Instance, kind: ChargeKind, level: f64) -> ChargePolicy {
    ChargePolicy::for_instance(kind, level, inst).unwrap()
}

pub struct Case {
    pub name: String,
    pub inst: Instance,
    pub policy: ChargePolicy,
}

fn case(name: &str, inst: &Instance, kind: ChargeKind, level: f64) -> Case {
    Case { name: format!("{name}/{}/{level}", kind.as_str()), inst: inst.clone(), policy: policy(inst, kind, level) }
}

/// Scenario suite spanning 1 to 19 zones, every charge kind and levels 0 to 3.
pub fn suite() -> Vec<Case> {
    use ChargeKind::*;
    let mut out = Vec::new();
    for (name, inst) in [("one_remote", one_zone(false)), ("one_core", one_zone(true))] {
        out.push(case(name, &inst, None, 0.0));
        out.push(case(name, &inst, TripBased, 2.0));
    }
    let two = two_zone();
    for (kind, level) in [(None, 0.0), (CordonIn, 1.0), (CordonBoth, 2.0), (TripBased, 3.0)] {
        out.push(case("two", &two, kind, level));
    }
    out.push(case("two_symmetric", &two_zone_symmetric(), None, 0.0));
    let three = three_zone_line();
    for (kind, level) in [(None, 0.0), (CordonIn, 3.0), (CordonBoth, 1.5), (TripBased, 1.0)] {
        out.push(case("three", &three, kind, level));
    }
    let grid = grid_preset(3, 1).unwrap().instance().unwrap();
    for (kind, level) in [(CordonIn, 2.0), (TripBased, 0.5)] {
        out.push(case("grid3", &grid, kind, level));
    }
    let synth = generate_synthetic(&GeneratorConfig { seed: 3, m: 8, ..Default::default() }).unwrap().instance().unwrap();
    for (kind, level) in [(None, 0.0), (CordonBoth, 3.0)] {
        out.push(case("synthetic8", &synth, kind, level));
    }
    let sf = sf_like_preset().instance().unwrap();
    for (kind, level) in [(None, 0.0), (CordonIn, 3.0), (CordonBoth, 3.0), (TripBased, 3.0)] {
        out.push(case("sf_like", &sf, kind, level));
    }
    out
}

pub fn grid_instance(n: usize) -> Instance {
    grid_preset(n, 1).unwrap().instance().unwrap()
}

const REL: f64 = 1e-9;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Every identity of the conservation suite; returns the first violation.
pub fn check_state(inst: &Instance, st: &MarketState) -> Result<(), String> {
    let m = inst.m();
    for i in 0..m {
        let little = st.w_d[i] * st.outflow(i);
        if !close(st.n_idle[i], little, 1e-12) {
            return Err(format!("Little's law in zone {i}: {} vs {little}", st.n_idle[i]));
        }
    }
    // vehicle-hours: occupied + pickup + idle
    let mut occupied = 0.0;
    let mut pickup = 0.0;
    let mut idle = 0.0;
    for i in 0..m {
        for j in 0..m {
            occupied += st.lambda[(i, j)] * st.t[(i, j)];
        }
        pickup += st.w_p[i] * st.outflow(i);
        idle += st.n_idle[i];
    }
    if [occupied, pickup, idle].iter().any(|x| *x < 0.0) {
        return Err("negative vehicle-hour component".into());
    }
    if !close(st.n_total, occupied + pickup + idle, REL) {
        return Err(format!("N decomposition: {} vs {}", st.n_total, occupied + pickup + idle));
    }
    // congested-area vehicles: in-area trip legs plus pickups and idling in congested zones
    let mut n_c = 0.0;
    for i in 0..m {
        for j in 0..m {
            n_c += st.lambda[(i, j)] * 60.0 * inst.trip_dc[(i, j)] / st.v_c;
        }
        if inst.is_congested(i) {
            n_c += st.w_p[i] * st.outflow(i) + st.n_idle[i];
        }
    }
    if !close(st.n_c, n_c, REL) {
        return Err(format!("N_C decomposition: {} vs {n_c}", st.n_c));
    }
    if !close(st.n_c_implied, n_c, REL) {
        return Err(format!("implied N_C: {} vs {n_c}", st.n_c_implied));
    }
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let s: f64 = st.flows.interception(&inst.paths, i, j).iter().map(|(_, pi)| pi).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(format!("interception probabilities {i}->{j} sum to {s}"));
            }
        }
        let planned = st.flows.f.row_sum(i);
        let realized = st.flows.f_tilde.row_sum(i);
        if !close(planned, realized, REL) {
            return Err(format!("realized flows out of {i}: {realized} vs {planned}"));
        }
    }
    if !walras_check(st) {
        return Err("Walras closure".into());
    }
    Ok(())
}

/// Relative agreement required between the relaxed solver and the oracle.
pub const RELAXED_RTOL: f64 = 1e-3;
pub const WAIT_TOL: f64 = 1e-4;
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Relaxed optimum of the solver at the oracle's congested count, next to
/// the oracle's objective, for every suite case with at most two zones.
pub fn relaxed_cases() -> Vec<(String, f64, f64)> {
    let cfg = SolverConfig::default();
    suite()
        .into_iter()
        .filter(|c| c.inst.m() <= 2)
        .map(|c| {
            let oracle = brute_force_relaxed(&c.inst, &c.policy, &RelaxedGrid::default()).unwrap().expect("feasible");
            let sol = solve_relaxed(&c.inst, &c.policy, oracle.n_c, &cfg).unwrap();
            (c.name, sol.r_bar, oracle.objective)
        })
        .collect()
}

pub struct EquilibriumCase {
    pub name: String,
    pub wait_error: f64,
    pub residual: f64,
}

/// Ten random 2- and 3-zone instances solved by both equilibrium codes.
pub fn equilibrium_cases() -> Vec<EquilibriumCase> {
    (0..10u64)
        .map(|seed| {
            let m = 2 + (seed % 2) as usize;
            let inst = random_small(seed, m);
            let kind = [ChargeKind::None, ChargeKind::CordonIn, ChargeKind::TripBased][(seed % 3) as usize];
            let pol = policy(&inst, kind, 1.5);
            let d = PricingDecision { r: (0..m).map(|i| 1.2 + 0.3 * i as f64).collect(), q: 27.0 };
            let st = solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()).unwrap();
            let w = brute_force_equilibrium(&d, &pol, &inst).unwrap();
            let wait_error = st.w_d.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let residual = max_abs(&equilibrium_residual(&d, &pol, &inst, &st.w_d).unwrap());
            EquilibriumCase { name: format!("seed {seed}, {m} zones, {}", kind.as_str()), wait_error, residual }
        })
        .collect()
}
