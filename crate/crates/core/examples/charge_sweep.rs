//! Sweeps a charge level on the San Francisco-like preset and prints one
//! row per level.
//!
//! cargo run --release -p sfl-core --example charge_sweep -- cordon_in 3 5

use sfl_core::policy::{ChargeKind, ChargePolicy};
use sfl_core::scenario::sf_like_preset;
use sfl_core::solver::{solve, SolverConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = match args.get(1).map(String::as_str) {
        Some("cordon_both") => ChargeKind::CordonBoth,
        Some("trip") => ChargeKind::TripBased,
        _ => ChargeKind::CordonIn,
    };
    let top: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let count: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let inst = sf_like_preset().instance().expect("preset is valid");
    println!("level      N_C    l11    l12    l21    l22   profit  tax     PS      DS     gap");
    for k in 0..count {
        let level = if count == 1 { 0.0 } else { top * k as f64 / (count - 1) as f64 };
        let policy = ChargePolicy::for_instance(kind, level, &inst).expect("valid policy");
        let rep = solve(&inst, &policy, &SolverConfig::default()).expect("solve");
        let a = &rep.areas;
        let w = &rep.welfare;
        println!(
            "{level:5.2} {:8.2} {:6.2} {:6.2} {:6.2} {:6.2} {:8.0} {:6.0} {:7.0} {:7.0} {:.4}",
            rep.state.n_c,
            a.lambda_11,
            a.lambda_12,
            a.lambda_21,
            a.lambda_22,
            w.platform_profit,
            w.tax_revenue,
            w.passenger_surplus,
            w.driver_surplus,
            rep.gap
        );
    }
}
