//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Built with `harness = false`.

mod common;

use common::*;
use sfl_core::equilibrium::{solve_given_prices, EquilibriumConfig, PricingDecision};
use sfl_core::policy::{find_charge_for_target, ChargeKind, Target};
use sfl_core::scenario::{sf_like_preset, Scenario};
use sfl_core::solver::{solve, SolverConfig, SolverReport};
use sfl_core::Instance;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Metric = (&'static str, fn(&SolverReport) -> f64);

const SCHEMES: [ChargeKind; 3] = [ChargeKind::CordonIn, ChargeKind::CordonBoth, ChargeKind::TripBased];

fn run(inst: &Instance, kind: ChargeKind, level: f64) -> SolverReport {
    solve(inst, &policy(inst, kind, level), &SolverConfig::default()).unwrap_or_else(|e| panic!("{} at {level}: {e}", kind.as_str()))
}

fn total_demand(r: &SolverReport) -> f64 {
    r.state.lambda.total()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let cases = suite();
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    let mut states_ok = true;
    for c in &cases {
        let rep = solve(&c.inst, &c.policy, &SolverConfig::default()).unwrap();
        let margin = (rep.bound - rep.profit) / rep.bound.abs();
        worst = worst.min(margin);
        if rep.bound < rep.profit - 1e-9 * rep.bound.abs() {
            failures.push(c.name.clone());
        }
        states_ok &= check_state(&c.inst, &rep.state).is_ok();
    }
    let secs = t.elapsed().as_secs_f64();
    let zones: Vec<usize> = cases.iter().map(|c| c.inst.m()).collect();
    outcome(
        failures.is_empty() && cases.len() >= 20 && secs < 600.0 && states_ok,
        format!(
            "{} scenarios, {}-{} zones, min (R_bar-R)/R_bar = {worst:.3e}, violations {failures:?}, converged states conserve: {states_ok}, {secs:.0}s",
            cases.len(),
            zones.iter().min().unwrap(),
            zones.iter().max().unwrap()
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let cases = relaxed_cases();
    let worst = cases.iter().map(|(_, b, o)| (b - o).abs() / o.abs()).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(worst <= RELAXED_RTOL && secs < 120.0, format!("{} instances, max rel diff {worst:.2e}, {secs:.0}s", cases.len()))
}

fn criterion_3() -> Outcome {
    let cases = equilibrium_cases();
    let wait = cases.iter().map(|c| c.wait_error).fold(0.0, f64::max);
    let res = cases.iter().map(|c| c.residual).fold(0.0, f64::max);
    outcome(
        cases.len() >= 10 && wait <= WAIT_TOL && res < RESIDUAL_TOL,
        format!("{} instances, max |dw_d| {wait:.2e}, max residual {res:.2e}", cases.len()),
    )
}

fn criterion_4() -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for seed in 0..120u64 {
        let m = 1 + (seed % 3) as usize;
        let inst = if m == 1 { one_zone(seed % 2 == 0) } else { random_small(seed, m) };
        let cores = (0..inst.m()).filter(|&i| inst.is_congested(i)).count();
        let kind = match seed % 4 {
            1 if cores > 0 && cores < inst.m() => ChargeKind::CordonIn,
            2 if cores > 0 && cores < inst.m() => ChargeKind::CordonBoth,
            3 => ChargeKind::TripBased,
            _ => ChargeKind::None,
        };
        let pol = policy(&inst, kind, (seed % 7) as f64 * 0.5);
        let d = PricingDecision {
            r: (0..inst.m()).map(|i| 0.6 + 0.17 * ((seed as usize + 3 * i) % 9) as f64).collect(),
            q: 18.0 + (seed % 5) as f64 * 6.0,
        };
        match solve_given_prices(&d, &pol, &inst, &EquilibriumConfig::default()) {
            Ok(st) => {
                checked += 1;
                if let Err(e) = check_state(&inst, &st) {
                    failures.push(format!("seed {seed}: {e}"));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(failures.is_empty(), format!("{checked} equilibria checked, failures {failures:?}"))
}

struct Sweep {
    nc: Vec<f64>,
    lambda_22: Vec<f64>,
    reports: Vec<SolverReport>,
}

fn cordon_in_sweep(inst: &Instance) -> Sweep {
    let levels: Vec<f64> = (0..5).map(|k| 0.75 * k as f64).collect();
    let reports: Vec<SolverReport> = levels.iter().map(|&l| run(inst, ChargeKind::CordonIn, l)).collect();
    Sweep { nc: reports.iter().map(|r| r.state.n_c).collect(), lambda_22: reports.iter().map(|r| r.areas.lambda_22).collect(), reports }
}

/// Monotone charge-response properties; returns a description of each check.
fn monotone_checks(inst: &Instance, sweep: &Sweep) -> (bool, String) {
    let nc_down = sweep.nc.windows(2).all(|w| w[1] < w[0]);
    let l22_up = sweep.lambda_22.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    let base = sweep.nc[0];
    let mut all_down = sweep.nc[4] < base;
    for kind in [ChargeKind::CordonBoth, ChargeKind::TripBased] {
        all_down &= run(inst, kind, 3.0).state.n_c < base;
    }
    (
        nc_down && l22_up && all_down,
        format!("N_C strictly down {nc_down}, lambda_22 nondecreasing {l22_up}, all schemes lower N_C {all_down}"),
    )
}

/// Values of each scheme at a common target; true when `winner` is strictly
/// highest on every metric.
fn ranks_first(inst: &Instance, target: Target, winner: ChargeKind, metrics: &[Metric]) -> (bool, String) {
    let found: Vec<_> = SCHEMES.iter().map(|&k| find_charge_for_target(inst, k, target, &SolverConfig::default()).unwrap()).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, f) in metrics {
        let vals: Vec<f64> = found.iter().map(|r| f(&r.report)).collect();
        let w = SCHEMES.iter().position(|&k| k == winner).unwrap();
        ok &= vals.iter().enumerate().all(|(k, v)| k == w || vals[w] > *v);
        parts.push(format!("{name} {:.1}/{:.1}/{:.1}", vals[0], vals[1], vals[2]));
    }
    let levels: Vec<String> = found.iter().map(|r| format!("{:.3}", r.level)).collect();
    (ok, format!("{target:?}: levels {} ; {}", levels.join("/"), parts.join(", ")))
}

fn criterion_5(sf: &Instance) -> (Outcome, Sweep) {
    let t = Instant::now();
    let sweep = cordon_in_sweep(sf);
    let (mono, mut detail) = monotone_checks(sf, &sweep);
    let profit: fn(&SolverReport) -> f64 = |r| r.profit;
    let demand: fn(&SolverReport) -> f64 = total_demand;
    let supply: fn(&SolverReport) -> f64 = |r| r.state.n_supply;
    let ps: fn(&SolverReport) -> f64 = |r| r.welfare.passenger_surplus;
    let ds: fn(&SolverReport) -> f64 = |r| r.welfare.driver_surplus;
    let mut ok = mono;
    for v in [80.0, 160.0] {
        let (pass, d) = ranks_first(
            sf,
            Target::NcReduction(v),
            ChargeKind::CordonIn,
            &[("profit", profit), ("demand", demand), ("supply", supply), ("PS", ps), ("DS", ds)],
        );
        ok &= pass;
        detail.push_str(&format!("; {d}"));
    }
    for v in [2000.0, 4000.0] {
        let (pass, d) = ranks_first(sf, Target::Revenue(v), ChargeKind::TripBased, &[("profit", profit), ("PS", ps), ("DS", ds)]);
        ok &= pass;
        detail.push_str(&format!("; {d}"));
    }
    let secs = t.elapsed().as_secs_f64();
    detail.push_str(&format!("; {secs:.0}s"));
    (outcome(ok && secs < 1200.0, detail), sweep)
}

fn criterion_6(sweep: &Sweep) -> Outcome {
    let r = &sweep.reports[0];
    outcome(r.gap <= 0.10, format!("R {:.1}, R_bar {:.1}, gap {:.2}%", r.profit, r.bound, 100.0 * r.gap))
}

fn perturbed(param: &str, s: f64) -> Scenario {
    let mut sc = sf_like_preset();
    let p = &mut sc.params;
    match param {
        "alpha" => p.alpha *= s,
        "epsilon" => p.epsilon *= s,
        "sigma" => p.sigma_s *= s,
        "eta" => p.eta *= s,
        "N0" => p.n0 *= s,
        "lambda0" => sc.scale_demand(s),
        _ => unreachable!(),
    }
    sc
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for param in ["alpha", "epsilon", "sigma", "eta", "N0", "lambda0"] {
        for s in [0.7, 1.3] {
            let inst = perturbed(param, s).instance().unwrap();
            let sweep = cordon_in_sweep(&inst);
            let (mono, _) = monotone_checks(&inst, &sweep);
            let gap = sweep.reports[0].gap;
            let pass = mono && gap <= 0.15;
            ok &= pass;
            parts.push(format!("{param}x{s}: {} gap {:.1}%", if pass { "ok" } else { "FAIL" }, 100.0 * gap));
        }
    }
    outcome(ok, parts.join(", "))
}

fn criterion_8(sf: &Instance) -> Outcome {
    let cases = [(three_zone_line(), ChargeKind::CordonBoth, 1.5), (sf.clone(), ChargeKind::TripBased, 1.0)];
    let mut ok = true;
    for (inst, kind, level) in &cases {
        let pol = policy(inst, *kind, *level);
        let json =
            |threads| serde_json::to_string(&solve(inst, &pol, &SolverConfig { threads, ..SolverConfig::default() }).unwrap()).unwrap();
        let first = json(1);
        ok &= first == json(1) && first == json(4);
    }
    outcome(ok, "repeat runs and 1 vs 4 threads compared byte for byte")
}

fn main() {
    let sf = sf_like_preset().instance().unwrap();
    let mut all = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all &= o.pass;
        println!("criterion {n} [{name}]: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "upper-bound dominance", criterion_1());
    report(2, "relaxed oracle", criterion_2());
    report(3, "equilibrium oracle", criterion_3());
    report(4, "conservation", criterion_4());
    let (c5, sweep) = criterion_5(&sf);
    report(5, "direction of effect", c5);
    report(6, "gap quality", criterion_6(&sweep));
    report(7, "sensitivity robustness", criterion_7());
    report(8, "determinism", criterion_8(&sf));
    if !all {
        std::process::exit(1);
    }
}
