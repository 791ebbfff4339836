//! Spatial pricing of a ride-hailing platform under congestion charges.
//!
//! The crate models passenger demand, driver supply and idle-vehicle
//! repositioning on a zone network, solves the resulting market
//! equilibrium, and searches for profit-maximizing fares and wages with a
//! certified upper bound.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behavior;
pub mod equilibrium;
pub mod error;
pub mod network;
pub mod numerics;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod policy;
pub mod repositioning;
pub mod scenario;
pub mod solver;

pub use behavior::BehaviorParams;
pub use equilibrium::{solve_given_prices, EquilibriumConfig, MarketState, PricingDecision};
pub use error::{Error, Result};
pub use network::{build_network, shortest_paths, Edge, Network, Zone};
pub use policy::{AreaSummary, ChargeKind, ChargePolicy, Target, WelfareReport};
pub use scenario::{load_scenario, save_scenario, Instance, Scenario};
pub use solver::{solve, SolverConfig, SolverReport};
