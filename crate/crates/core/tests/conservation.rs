//! Accounting identities at converged equilibria.

mod common;

use common::*;
use proptest::prelude::*;
use sfl_core::equilibrium::{solve_from, EquilibriumConfig, EquilibriumGuess, PricingDecision};
use sfl_core::policy::ChargeKind;

fn kind_of(k: u8) -> ChargeKind {
    [ChargeKind::None, ChargeKind::CordonIn, ChargeKind::CordonBoth, ChargeKind::TripBased][k as usize % 4]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn identities_hold_at_equilibrium(
        seed in 0u64..10_000,
        m in 1usize..=3,
        kind in 0u8..4,
        level in 0.0f64..3.0,
        r in proptest::collection::vec(0.2f64..4.0, 3),
        q in 10.0f64..60.0,
    ) {
        let inst = if m == 1 { one_zone(seed % 2 == 0) } else { random_small(seed, m) };
        let cores = (0..inst.m()).filter(|&i| inst.is_congested(i)).count();
        let kind = match kind_of(kind) {
            ChargeKind::CordonIn | ChargeKind::CordonBoth if cores == 0 || cores == inst.m() => ChargeKind::TripBased,
            k => k,
        };
        let pol = policy(&inst, kind, level);
        let d = PricingDecision { r: r[..inst.m()].to_vec(), q };
        let (st, _) = solve_from(&d, &pol, &inst, &EquilibriumConfig::default(), None).unwrap();
        prop_assert!(check_state(&inst, &st).is_ok(), "{:?}", check_state(&inst, &st));
    }
}

#[test]
fn identities_hold_on_larger_networks() {
    let cases = suite();
    let picked = cases.iter().filter(|c| c.inst.m() > 3);
    for c in picked {
        let d = PricingDecision::uniform(c.inst.m(), 1.1, 28.0);
        let (st, _) = solve_from(&d, &c.policy, &c.inst, &EquilibriumConfig::default(), None).unwrap();
        check_state(&c.inst, &st).unwrap_or_else(|e| panic!("{}: {e}", c.name));
    }
}

#[test]
fn warm_start_reaches_the_cold_solution() {
    let inst = three_zone_line();
    let pol = policy(&inst, ChargeKind::CordonIn, 1.0);
    let cfg = EquilibriumConfig::default();
    let d0 = PricingDecision { r: vec![1.0, 1.3, 0.9], q: 27.0 };
    let (cold, _) = solve_from(&d0, &pol, &inst, &cfg, None).unwrap();
    let d1 = PricingDecision { r: vec![1.05, 1.3, 0.9], q: 27.5 };
    let (from_cold, _) = solve_from(&d1, &pol, &inst, &cfg, None).unwrap();
    let (from_warm, diag) = solve_from(&d1, &pol, &inst, &cfg, Some(&EquilibriumGuess::from_state(&cold))).unwrap();
    for (a, b) in from_cold.w_d.iter().zip(&from_warm.w_d) {
        assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{:?} vs {:?}", from_cold.w_d, from_warm.w_d);
    }
    assert!(diag.iterations > 0 || from_warm.residuals().max_independent() < 1e-8);
}
