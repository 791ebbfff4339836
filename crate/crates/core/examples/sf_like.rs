//! Solves the bundled San Francisco-like preset under a chosen charge and
//! prints a short summary.
//!
//! cargo run --release -p sfl-core --example sf_like -- cordon_in 3

use sfl_core::policy::{ChargeKind, ChargePolicy};
use sfl_core::scenario::sf_like_preset;
use sfl_core::solver::{solve, SolverConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = match args.get(1).map(String::as_str) {
        Some("cordon_in") => ChargeKind::CordonIn,
        Some("cordon_both") => ChargeKind::CordonBoth,
        Some("trip") => ChargeKind::TripBased,
        _ => ChargeKind::None,
    };
    let level: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let mut sc = sf_like_preset();
    if let Some(rate) = args.get(3).and_then(|s| s.parse::<f64>().ok()) {
        if let sfl_core::scenario::AltCost::PerMile { rate_per_mile, .. } = &mut sc.alt_cost {
            *rate_per_mile = rate;
        }
    }
    let inst = sc.instance().expect("preset is valid");
    let policy = ChargePolicy::for_instance(kind, level, &inst).expect("valid policy");
    let rep = solve(&inst, &policy, &SolverConfig::default()).expect("solve");
    let s = &rep.state;
    let trips: f64 = s.lambda.total();
    println!("R = {:.1}  R_bar = {:.1}  gap = {:.4}", rep.profit, rep.bound, rep.gap);
    println!("q = {:.3}  N = {:.1}  N_C = {:.1}  trips/min = {:.2}", rep.decision.q, s.n_total, s.n_c, trips);
    let fare: f64 =
        (0..inst.m()).map(|i| rep.decision.r[i] * (0..inst.m()).map(|j| s.lambda[(i, j)] * s.t[(i, j)]).sum::<f64>()).sum::<f64>() / trips;
    let wp: f64 = (0..inst.m()).map(|i| s.w_p[i] * s.lambda.row_sum(i)).sum::<f64>() / trips;
    println!("avg fare = {:.2}  avg pickup = {:.2}  potential = {:.1}", fare, wp, inst.lambda0().total());
    println!("r = {:?}", rep.decision.r.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("relaxed: N_C = {:.1}  feasible = {}  R_bar = {:.1}", rep.relaxed.n_c, rep.relaxed.dual_feasible, rep.relaxed.r_bar);
    let d = &rep.diagnostics;
    println!(
        "grid: {:?}",
        d.nc_points.iter().zip(&d.bound_by_nc).zip(&d.dual_iterations).map(|((a, b), c)| (a.round(), b.round(), *c)).collect::<Vec<_>>()
    );
    println!(
        "certified = {:.1}  refine iters = {}  eq solves = {}  wall = {:.2}s",
        d.certified_bound, d.refine_iterations, d.equilibrium_solves, d.wall_time_s
    );
}
