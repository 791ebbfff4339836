//! Driver repositioning choice, en-route interception and realized
//! rebalancing flows.

use crate::error::{Error, Result};
use crate::network::PathTable;
use crate::numerics::{softmax_into, SquareMatrix};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoneEarnings {
    /// Average fare of a trip starting in the zone, $.
    pub e_bar: f64,
    /// Demand-weighted average trip time out of the zone, min.
    pub t_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMatrices {
    #[serde(rename = "P")]
    pub p: SquareMatrix,
    /// Intended repositioning flows, vehicles/min.
    pub f: SquareMatrix,
    /// Realized flows after interception, vehicles/min.
    pub f_tilde: SquareMatrix,
    pub sigma_z: Vec<f64>,
}

impl FlowMatrices {
    pub fn zeros(m: usize) -> Self {
        Self { p: SquareMatrix::zeros(m), f: SquareMatrix::zeros(m), f_tilde: SquareMatrix::zeros(m), sigma_z: vec![0.0; m] }
    }

    /// Interception probabilities along the path from `i` to `j`, paired
    /// with the intercepting zone.
    pub fn interception(&self, table: &PathTable, i: usize, j: usize) -> Vec<(usize, f64)> {
        let path = table.path(i, j);
        path.iter().copied().zip(interception_probs(path, &self.sigma_z)).collect()
    }
}

/// Demand-weighted trip time and average fare out of every zone.
///
/// Zones without outbound demand fall back to the network-wide
/// demand-weighted mean trip time (or the plain mean if there is no demand
/// at all).
pub fn zone_earnings(r: &[f64], lambda: &SquareMatrix, t: &SquareMatrix) -> Vec<ZoneEarnings> {
    let m = r.len();
    let total = lambda.total();
    let fallback = if total > 0.0 {
        lambda.as_slice().iter().zip(t.as_slice()).map(|(l, t)| l * t).sum::<f64>() / total
    } else {
        t.total() / (m * m) as f64
    };
    (0..m)
        .map(|i| {
            let row = lambda.row(i);
            let out: f64 = row.iter().sum();
            let t_bar = if out > 0.0 { row.iter().zip(t.row(i)).map(|(l, t)| l * t).sum::<f64>() / out } else { fallback };
            ZoneEarnings { e_bar: r[i] * t_bar, t_bar }
        })
        .collect()
}

/// Logit repositioning probabilities.
///
/// Utilities are earnings rates in $/hr scaled by `eta`; a driver-side
/// charge is subtracted from the fare of every charged destination.
pub fn repositioning_probs(
    earnings: &[ZoneEarnings],
    t: &SquareMatrix,
    w_d: &[f64],
    eta: f64,
    driver_charge: &SquareMatrix,
) -> Result<SquareMatrix> {
    let m = earnings.len();
    if let Some(&bad) = w_d.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::NonPositiveWait(bad));
    }
    let mut p = SquareMatrix::zeros(m);
    let mut u = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            u[j] = if i == j {
                60.0 * eta * earnings[i].e_bar / (w_d[i] + earnings[i].t_bar)
            } else {
                60.0 * eta * (earnings[j].e_bar - driver_charge[(i, j)]) / (t[(i, j)] + w_d[j] + earnings[j].t_bar)
            };
        }
        softmax_into(&u, p.row_mut(i));
    }
    Ok(p)
}

/// Intended flows: each row of `p` scaled by the trip arrivals into the zone.
pub fn intended_flows(p: &SquareMatrix, lambda: &SquareMatrix) -> SquareMatrix {
    let m = p.dim();
    let mut f = SquareMatrix::zeros(m);
    for i in 0..m {
        let inflow = lambda.col_sum(i);
        for (fij, pij) in f.row_mut(i).iter_mut().zip(p.row(i)) {
            *fij = pij * inflow;
        }
    }
    f
}

/// Probability that an idle vehicle crossing a zone gets matched before it
/// leaves.
pub fn zone_match_prob(d_time: f64, w_d: f64) -> Result<f64> {
    if !(w_d > 0.0) {
        return Err(Error::NonPositiveWait(w_d));
    }
    if d_time < 0.0 {
        return Err(Error::NegativeInput("traverse time"));
    }
    Ok(-(-d_time / w_d).exp_m1())
}

/// Interception probability for each zone of `path`, in path order.
///
/// The destination absorbs whatever probability is left, so the values sum
/// to one.
pub fn interception_probs(path: &[usize], sigma_z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.len());
    let mut survive = 1.0;
    for (s, &k) in path.iter().enumerate() {
        if s + 1 == path.len() {
            out.push(survive);
        } else {
            out.push(survive * sigma_z[k]);
            survive *= 1.0 - sigma_z[k];
        }
    }
    out
}

/// Redistributes intended flows onto the zones that intercept them.
pub fn realized_flows(f: &SquareMatrix, table: &PathTable, sigma_z: &[f64]) -> SquareMatrix {
    let m = f.dim();
    let mut ft = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let fij = f[(i, j)];
            if fij == 0.0 {
                continue;
            }
            let path = table.path(i, j);
            let last = path.len() - 1;
            let mut survive = fij;
            for &k in &path[..last] {
                let caught = survive * sigma_z[k];
                ft[(i, k)] += caught;
                survive -= caught;
            }
            ft[(i, j)] += survive;
        }
    }
    ft
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, shortest_paths, Edge, Zone};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line_table() -> PathTable {
        let zones = (0..3).map(|k| Zone::new(k, k == 0, 1.0)).collect();
        shortest_paths(&build_network(zones, vec![Edge(0, 1, 2.0), Edge(1, 2, 3.0)]).unwrap())
    }

    #[test]
    fn earnings_examples() {
        let t = SquareMatrix::from_rows(&[vec![1.0, 10.0], vec![10.0, 1.0]]).unwrap();
        let lam = SquareMatrix::from_rows(&[vec![0.0, 5.0], vec![1.0, 1.0]]).unwrap();
        let e = zone_earnings(&[2.0, 1.0], &lam, &t);
        assert_relative_eq!(e[0].t_bar, 10.0);
        assert_relative_eq!(e[0].e_bar, 20.0);

        let t = SquareMatrix::from_rows(&[vec![10.0, 20.0], vec![1.0, 1.0]]).unwrap();
        let eq = SquareMatrix::from_rows(&[vec![2.0, 2.0], vec![1.0, 1.0]]).unwrap();
        assert_relative_eq!(zone_earnings(&[1.0, 1.0], &eq, &t)[0].t_bar, 15.0);
        let w = SquareMatrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 1.0]]).unwrap();
        assert_relative_eq!(zone_earnings(&[1.0, 1.0], &w, &t)[0].t_bar, 17.5);
    }

    #[test]
    fn earnings_fallback_for_empty_row() {
        let t = SquareMatrix::from_rows(&[vec![2.0, 4.0], vec![6.0, 8.0]]).unwrap();
        let lam = SquareMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let e = zone_earnings(&[1.0, 1.0], &lam, &t);
        assert_relative_eq!(e[0].t_bar, (6.0 + 24.0) / 4.0);
    }

    #[test]
    fn probs_examples() {
        let t = SquareMatrix::filled(3, 5.0);
        let none = SquareMatrix::zeros(3);
        let earn = vec![
            ZoneEarnings { e_bar: 10.0, t_bar: 5.0 },
            ZoneEarnings { e_bar: 30.0, t_bar: 8.0 },
            ZoneEarnings { e_bar: 3.0, t_bar: 2.0 },
        ];
        let p = repositioning_probs(&earn, &t, &[1.0, 2.0, 3.0], 0.0, &none).unwrap();
        for k in 0..9 {
            assert_relative_eq!(p.as_slice()[k], 1.0 / 3.0, epsilon = 1e-15);
        }

        let t2 = SquareMatrix::zeros(2);
        let z2 = SquareMatrix::zeros(2);
        let same = vec![ZoneEarnings { e_bar: 5.0, t_bar: 2.0 }; 2];
        let p = repositioning_probs(&same, &t2, &[1.0, 1.0], 0.1, &z2).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);

        // own utility ln 3, other 0: e_bar/(w+t_bar) with w + t_bar = 1, eta*60 = 1
        let earn = vec![ZoneEarnings { e_bar: 3f64.ln(), t_bar: 0.5 }, ZoneEarnings { e_bar: 0.0, t_bar: 0.5 }];
        let p = repositioning_probs(&earn, &t2, &[0.5, 0.5], 1.0 / 60.0, &z2).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.75, epsilon = 1e-14);
        assert_relative_eq!(p[(0, 1)], 0.25, epsilon = 1e-14);

        assert_eq!(repositioning_probs(&earn, &t2, &[0.0, 1.0], 0.1, &z2), Err(Error::NonPositiveWait(0.0)));
    }

    #[test]
    fn intended_flow_examples() {
        let p = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let lam = SquareMatrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let f = intended_flows(&p, &lam);
        assert_eq!(f.row(0), &[2.0, 2.0]);
        assert_eq!(f.row(1), &[0.0, 0.0]);
        let stay = SquareMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(intended_flows(&stay, &lam)[(0, 0)], 4.0);
    }

    #[test]
    fn match_prob_examples() {
        assert_relative_eq!(zone_match_prob(2.0, 2.0).unwrap(), 0.632_120_558_828_557_7, epsilon = 1e-15);
        assert_eq!(zone_match_prob(0.0, 2.0).unwrap(), 0.0);
        assert_relative_eq!(zone_match_prob(6.0, 2.0).unwrap(), 0.950_212_931_632_136, epsilon = 1e-15);
        assert_eq!(zone_match_prob(1.0, 0.0), Err(Error::NonPositiveWait(0.0)));
    }

    #[test]
    fn interception_examples() {
        assert_eq!(interception_probs(&[0, 1, 2], &[0.0, 0.0, 0.0]), vec![0.0, 0.0, 1.0]);
        assert_eq!(interception_probs(&[0, 1, 2], &[1.0, 0.3, 0.3])[0], 1.0);
        assert_eq!(interception_probs(&[0, 1, 2], &[0.5, 0.5, 0.9]), vec![0.5, 0.25, 0.25]);
        assert_eq!(interception_probs(&[1], &[0.4, 0.7]), vec![1.0]);
    }

    #[test]
    fn realized_flow_examples() {
        let table = line_table();
        let f = SquareMatrix::from_fn(3, |i, j| (1 + i + 2 * j) as f64);
        assert_eq!(realized_flows(&f, &table, &[0.0; 3]), f);

        let mut single = SquareMatrix::zeros(3);
        single[(0, 2)] = 4.0;
        let ft = realized_flows(&single, &table, &[0.0, 1.0, 0.0]);
        assert_eq!(ft.row(0), &[0.0, 4.0, 0.0]);

        // hand enumeration with sigma = (0.2, 0.5, 0.1) on the line 0-1-2
        let sig = [0.2, 0.5, 0.1];
        let ft = realized_flows(&f, &table, &sig);
        // row 0: f00=1 stays; f01=3 -> 0.6 at 0, 2.4 at 1; f02=5 -> 1.0 at 0, 2.0 at 1, 2.0 at 2
        assert_relative_eq!(ft[(0, 0)], 2.6, epsilon = 1e-14);
        assert_relative_eq!(ft[(0, 1)], 4.4, epsilon = 1e-14);
        assert_relative_eq!(ft[(0, 2)], 2.0, epsilon = 1e-14);
        // row 2: f20=3 -> 0.3 at 2, 1.35 at 1, 1.35 at 0; f21=5 -> 0.5 at 2, 4.5 at 1; f22=7 stays
        assert_relative_eq!(ft[(2, 0)], 1.35, epsilon = 1e-14);
        assert_relative_eq!(ft[(2, 1)], 5.85, epsilon = 1e-14);
        assert_relative_eq!(ft[(2, 2)], 7.8, epsilon = 1e-14);
        for i in 0..3 {
            assert_relative_eq!(ft.row_sum(i), f.row_sum(i), epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn probs_are_row_stochastic(
            e in prop::collection::vec(0.0..80.0f64, 4),
            tb in prop::collection::vec(0.1..30.0f64, 4),
            w in prop::collection::vec(0.01..20.0f64, 4),
            eta in 0.0..5.0f64,
        ) {
            let earn: Vec<_> = e.iter().zip(&tb).map(|(&e_bar, &t_bar)| ZoneEarnings { e_bar, t_bar }).collect();
            let t = SquareMatrix::from_fn(4, |i, j| if i == j { 0.0 } else { 1.0 + (i + j) as f64 });
            let p = repositioning_probs(&earn, &t, &w, eta, &SquareMatrix::zeros(4)).unwrap();
            for i in 0..4 {
                prop_assert!((p.row_sum(i) - 1.0).abs() < 1e-12);
                prop_assert!(p.row(i).iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn driver_charge_moves_mass_away(charge in 0.01..20.0f64, e in prop::collection::vec(1.0..60.0f64, 3)) {
            let earn: Vec<_> = e.iter().map(|&e_bar| ZoneEarnings { e_bar, t_bar: 8.0 }).collect();
            let t = SquareMatrix::filled(3, 4.0);
            let w = [3.0, 3.0, 3.0];
            let base = repositioning_probs(&earn, &t, &w, 0.1, &SquareMatrix::zeros(3)).unwrap();
            let mut dc = SquareMatrix::zeros(3);
            dc[(0, 2)] = charge;
            let hit = repositioning_probs(&earn, &t, &w, 0.1, &dc).unwrap();
            prop_assert!(hit[(0, 2)] <= base[(0, 2)]);
            prop_assert!(hit[(0, 0)] >= base[(0, 0)]);
            prop_assert!(hit[(0, 1)] >= base[(0, 1)]);
        }

        #[test]
        fn interception_sums_to_one(sig in prop::collection::vec(0.0..1.0f64, 1..8)) {
            let path: Vec<usize> = (0..sig.len()).collect();
            let s: f64 = interception_probs(&path, &sig).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn realized_flows_conserve_rows(
            vals in prop::collection::vec(0.0..10.0f64, 9),
            sig in prop::collection::vec(0.0..1.0f64, 3),
        ) {
            let f = SquareMatrix::from_fn(3, |i, j| vals[3 * i + j]);
            let ft = realized_flows(&f, &line_table(), &sig);
            for i in 0..3 {
                prop_assert!((ft.row_sum(i) - f.row_sum(i)).abs() <= 1e-9 * f.row_sum(i).max(1.0));
                prop_assert!(ft.row(i).iter().all(|&x| x >= 0.0));
            }
        }
    }
}
