//! Closed-form behavioral primitives: trip cost, logit demand and supply,
//! square-root pickup times, congested speed and travel times.
//!
//! Units: miles, minutes, fares in $/min, wages in $/hr, vehicle counts in
//! vehicle-hours per hour.

use crate::error::{Error, Result};
use crate::numerics::logit_share;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    /// Value of waiting time, $/min.
    pub alpha: f64,
    /// Value of in-vehicle time, $/min.
    pub beta: f64,
    /// Demand logit scale, 1/$.
    pub epsilon: f64,
    /// Supply logit scale, 1/($/hr).
    pub sigma_s: f64,
    /// Repositioning logit scale, applied to earnings rates in $/hr.
    pub eta: f64,
    #[serde(rename = "N0")]
    pub n0: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Reservation wage, $/hr.
    pub q0: f64,
    /// Pickup-time cap, min.
    pub w_max: f64,
    /// Free-flow speed in the congested area, mph.
    pub vc0: f64,
    /// Slope of inverse congested speed per vehicle, (hr/mi)/vehicle.
    pub rho: f64,
    /// Remote-area speed, mph.
    pub vr: f64,
}

impl BehaviorParams {
    /// Parameter values calibrated for the San Francisco-scale case study.
    pub fn calibrated() -> Self {
        Self {
            alpha: 3.0,
            beta: 1.0,
            epsilon: 0.12,
            sigma_s: 0.17,
            eta: 0.1,
            n0: 10_000.0,
            l: 43.0,
            q0: 29.34,
            w_max: 10.0,
            vc0: 15.0,
            rho: 0.1 / (15.0 * 1000.0),
            vr: 20.0,
        }
    }

    /// Checks that every parameter is finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
            ("sigma_s", self.sigma_s),
            ("eta", self.eta),
            ("N0", self.n0),
            ("L", self.l),
            ("q0", self.q0),
            ("w_max", self.w_max),
            ("vc0", self.vc0),
            ("rho", self.rho),
            ("vr", self.vr),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation { invariant: format!("params.{name} positive") });
            }
        }
        Ok(())
    }

    /// Smallest idle count compatible with the pickup-time cap.
    pub fn min_idle(&self) -> f64 {
        (self.l / self.w_max).powi(2)
    }
}

/// Generalized trip cost in $.
pub fn generalized_cost(w_p: f64, t_ij: f64, r_i: f64, params: &BehaviorParams, passenger_charge: f64) -> Result<f64> {
    if w_p < 0.0 {
        return Err(Error::NegativeInput("pickup time"));
    }
    if t_ij < 0.0 {
        return Err(Error::NegativeInput("travel time"));
    }
    if r_i < 0.0 {
        return Err(Error::NegativeInput("fare"));
    }
    if passenger_charge < 0.0 {
        return Err(Error::NegativeInput("passenger charge"));
    }
    Ok(params.alpha * w_p + (params.beta + r_i) * t_ij + passenger_charge)
}

/// Ride-sourcing trips per minute out of a potential `lambda0`.
#[inline]
pub fn demand_rate(lambda0: f64, c: f64, c0: f64, epsilon: f64) -> f64 {
    lambda0 * logit_share(-epsilon * c, -epsilon * c0)
}

/// Vehicle-hours supplied at wage `q` ($/hr).
#[inline]
pub fn supply_hours(q: f64, params: &BehaviorParams) -> f64 {
    params.n0 * logit_share(params.sigma_s * q, params.sigma_s * params.q0)
}

/// Wage at which `hours` vehicle-hours are supplied; `None` outside `(0, N0)`.
pub fn wage_for_hours(hours: f64, params: &BehaviorParams) -> Option<f64> {
    if !(hours > 0.0 && hours < params.n0) {
        return None;
    }
    let s = hours / params.n0;
    Some(params.q0 + (s / (1.0 - s)).ln() / params.sigma_s)
}

/// Square-root pickup time in minutes.
pub fn pickup_time(n_idle: f64, l: f64) -> Result<f64> {
    if !(n_idle > 0.0) {
        return Err(Error::NonPositiveIdleVehicles(n_idle));
    }
    Ok(l / n_idle.sqrt())
}

/// Idle vehicles needed for a pickup time of `w_p` minutes.
pub fn idle_for_pickup(w_p: f64, l: f64) -> Result<f64> {
    if !(w_p > 0.0) {
        return Err(Error::NonPositiveWait(w_p));
    }
    Ok((l / w_p).powi(2))
}

/// Congested-area speed (mph) with `n_c` vehicles in the area.
#[inline]
pub fn congestion_speed(n_c: f64, params: &BehaviorParams) -> f64 {
    1.0 / (1.0 / params.vc0 + params.rho * n_c)
}

/// Travel time in minutes.
pub fn travel_time(d_c: f64, d_r: f64, v_c: f64, v_r: f64) -> Result<f64> {
    if !(v_c > 0.0) {
        return Err(Error::NonPositiveSpeed(v_c));
    }
    if !(v_r > 0.0) {
        return Err(Error::NonPositiveSpeed(v_r));
    }
    if d_c < 0.0 || d_r < 0.0 {
        return Err(Error::NegativeInput("distance"));
    }
    Ok(60.0 * (d_c / v_c + d_r / v_r))
}
