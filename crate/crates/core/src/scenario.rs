//! Scenario files, validation and synthetic generators.

use crate::behavior::BehaviorParams;
use crate::error::{Error, Result};
use crate::network::{build_network, shortest_paths, Edge, Network, PathTable, Zone};
use crate::numerics::SquareMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;

/// Alternative-mode generalized cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AltCost {
    /// `rate_per_mile * distance`, scaled by `markup` for trips touching an
    /// underserved zone.
    PerMile {
        rate_per_mile: f64,
        underserved: Vec<usize>,
        markup: f64,
    },
    Matrix {
        matrix: SquareMatrix,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub zones: Vec<Zone>,
    pub edges: Vec<Edge>,
    /// Potential demand, trips/min.
    pub lambda0: SquareMatrix,
    pub alt_cost: AltCost,
    pub params: BehaviorParams,
    #[serde(default)]
    pub meta: Map<String, Value>,
    /// Optional per-pair multipliers on the uniform charge level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_weights: Option<SquareMatrix>,
}

/// A validated scenario with its derived geometry.
#[derive(Debug, Clone)]
pub struct Instance {
    pub scenario: Scenario,
    pub network: Network,
    pub paths: PathTable,
    /// Trip miles inside the congested area; the diagonal holds the
    /// intra-zone trip length.
    pub trip_dc: SquareMatrix,
    /// Trip miles inside the remote area.
    pub trip_dr: SquareMatrix,
    pub c0: SquareMatrix,
}

impl Instance {
    pub fn m(&self) -> usize {
        self.network.len()
    }

    pub fn params(&self) -> &BehaviorParams {
        &self.scenario.params
    }

    pub fn lambda0(&self) -> &SquareMatrix {
        &self.scenario.lambda0
    }

    pub fn is_congested(&self, i: usize) -> bool {
        self.network.is_congested(i)
    }
}

impl Scenario {
    pub fn m(&self) -> usize {
        self.zones.len()
    }

    /// Validates the scenario and derives shortest paths and costs.
    pub fn instance(&self) -> Result<Instance> {
        self.params.validate()?;
        let network = build_network(self.zones.clone(), self.edges.clone())?;
        let m = network.len();
        if self.lambda0.dim() != m {
            return Err(Error::Validation { invariant: "lambda0 is M x M".into() });
        }
        if self.lambda0.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Validation { invariant: "lambda0 nonnegative".into() });
        }
        if let Some(w) = &self.charge_weights {
            if w.dim() != m {
                return Err(Error::Validation { invariant: "charge_weights is M x M".into() });
            }
            if w.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Validation { invariant: "charge_weights nonnegative".into() });
            }
        }
        let paths = shortest_paths(&network);
        let trav: Vec<f64> = network.zones().iter().map(|z| z.traverse_distance).collect();
        let trip_dc = SquareMatrix::from_fn(m, |i, j| {
            if i == j {
                if network.is_congested(i) {
                    trav[i]
                } else {
                    0.0
                }
            } else {
                paths.congested_miles[(i, j)]
            }
        });
        let trip_dr = SquareMatrix::from_fn(m, |i, j| {
            if i == j {
                if network.is_congested(i) {
                    0.0
                } else {
                    trav[i]
                }
            } else {
                paths.remote_miles[(i, j)]
            }
        });
        let c0 = match &self.alt_cost {
            AltCost::Matrix { matrix } => {
                if matrix.dim() != m {
                    return Err(Error::Validation { invariant: "alt_cost.matrix is M x M".into() });
                }
                if matrix.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::Validation { invariant: "alt_cost nonnegative".into() });
                }
                matrix.clone()
            }
            AltCost::PerMile { rate_per_mile, underserved, markup } => {
                if !(*rate_per_mile >= 0.0 && rate_per_mile.is_finite()) {
                    return Err(Error::Validation { invariant: "alt_cost.rate_per_mile nonnegative".into() });
                }
                if !(*markup > 0.0 && markup.is_finite()) {
                    return Err(Error::Validation { invariant: "alt_cost.markup positive".into() });
                }
                let mut flag = vec![false; m];
                for &u in underserved {
                    if u >= m {
                        return Err(Error::Validation { invariant: format!("underserved zone {u} exists") });
                    }
                    flag[u] = true;
                }
                SquareMatrix::from_fn(m, |i, j| {
                    let miles = trip_dc[(i, j)] + trip_dr[(i, j)];
                    let k = if flag[i] || flag[j] { *markup } else { 1.0 };
                    rate_per_mile * miles * k
                })
            }
        };
        Ok(Instance { scenario: self.clone(), network, paths, trip_dc, trip_dr, c0 })
    }

    /// Multiplies every potential-demand entry by `factor`.
    pub fn scale_demand(&mut self, factor: f64) {
        self.lambda0 = self.lambda0.map(|x| x * factor);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        check_schema(&value)?;
        let s: Scenario =
            serde_json::from_value(value).map_err(|e| Error::SchemaViolation { path: String::new(), message: e.to_string() })?;
        s.instance()?;
        Ok(s)
    }
}

const PARAM_KEYS: [&str; 12] = ["alpha", "beta", "epsilon", "sigma_s", "eta", "N0", "L", "q0", "w_max", "vc0", "rho", "vr"];

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::SchemaViolation { path: path.into(), message: message.into() }
}

fn check_schema(v: &Value) -> Result<()> {
    let root = v.as_object().ok_or_else(|| schema_err("$", "expected an object"))?;
    for key in ["zones", "edges", "lambda0", "alt_cost", "params"] {
        if !root.contains_key(key) {
            return Err(schema_err(key, "missing field"));
        }
    }
    let zones = root["zones"].as_array().ok_or_else(|| schema_err("zones", "expected an array"))?;
    for (k, z) in zones.iter().enumerate() {
        let z = z.as_object().ok_or_else(|| schema_err(format!("zones[{k}]"), "expected an object"))?;
        for key in ["id", "congested", "traverse_miles"] {
            if !z.contains_key(key) {
                return Err(schema_err(format!("zones[{k}].{key}"), "missing field"));
            }
        }
    }
    let edges = root["edges"].as_array().ok_or_else(|| schema_err("edges", "expected an array"))?;
    for (k, e) in edges.iter().enumerate() {
        let ok = e.as_array().is_some_and(|a| a.len() == 3);
        if !ok {
            return Err(schema_err(format!("edges[{k}]"), "expected [from, to, miles]"));
        }
    }
    let params = root["params"].as_object().ok_or_else(|| schema_err("params", "expected an object"))?;
    for key in PARAM_KEYS {
        match params.get(key) {
            None => return Err(schema_err(format!("params.{key}"), "missing field")),
            Some(x) if !x.is_number() => return Err(schema_err(format!("params.{key}"), "expected a number")),
            _ => {}
        }
    }
    let alt = root["alt_cost"].as_object().ok_or_else(|| schema_err("alt_cost", "expected an object"))?;
    if !alt.contains_key("matrix") {
        for key in ["rate_per_mile", "underserved", "markup"] {
            if !alt.contains_key(key) {
                return Err(schema_err(format!("alt_cost.{key}"), "missing field"));
            }
        }
    }
    let rows = root["lambda0"].as_array().ok_or_else(|| schema_err("lambda0", "expected an array of rows"))?;
    for (k, r) in rows.iter().enumerate() {
        if r.as_array().is_none_or(|a| a.len() != rows.len()) {
            return Err(schema_err(format!("lambda0[{k}]"), "expected a row of length M"));
        }
    }
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario.to_json() + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub congested_fraction: f64,
    /// Target ride-sourcing trips/min at the reference mode share.
    pub demand_scale: f64,
    /// Reference ride-sourcing mode share used to back out potential demand.
    pub mode_share: f64,
    pub gravity_exponent: f64,
    pub underserved_markup: f64,
    /// Alternative-mode cost, $/mi.
    pub rate_per_mile: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            m: 12,
            congested_fraction: 0.3,
            demand_scale: 156.0,
            mode_share: 0.15,
            gravity_exponent: 1.0,
            underserved_markup: 1.5,
            rate_per_mile: ALT_RATE_PER_MILE,
        }
    }
}

/// Alternative-mode cost per mile used by the generators.
pub const ALT_RATE_PER_MILE: f64 = 7.2;

const DETOUR: f64 = 1.25;
const CORE_TRAVERSE: f64 = 1.0;
const REMOTE_TRAVERSE: f64 = 1.5;

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Connects every zone to its `k` nearest neighbours, then links any
/// remaining components through their closest pair.
fn knn_edges(pos: &[(f64, f64)], k: usize) -> Vec<Edge> {
    let m = pos.len();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 0..m {
        let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| euclid(pos[i], pos[a]).total_cmp(&euclid(pos[i], pos[b])).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    loop {
        let mut comp: Vec<usize> = (0..m).collect();
        fn find(c: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while c[r] != r {
                r = c[r];
            }
            c[x] = r;
            r
        }
        for &(a, b) in &pairs {
            let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
            comp[ra.max(rb)] = ra.min(rb);
        }
        let roots: Vec<usize> = (0..m).map(|x| find(&mut comp, x)).collect();
        if roots.iter().all(|&r| r == roots[0]) {
            break;
        }
        // join zone 0's component to the nearest outside zone
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..m {
            for b in 0..m {
                if roots[a] == roots[0] && roots[b] != roots[0] {
                    let d = euclid(pos[a], pos[b]);
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
        }
        pairs.insert((best.1.min(best.2), best.1.max(best.2)));
    }
    pairs.into_iter().map(|(a, b)| Edge(a, b, DETOUR * euclid(pos[a], pos[b]))).collect()
}

/// Trip miles between zone centroids, with the diagonal set to the
/// zone's traverse distance.
fn trip_miles(zones: &[Zone], edges: &[Edge]) -> SquareMatrix {
    let net = build_network(zones.to_vec(), edges.to_vec()).expect("generated graph is valid");
    let paths = shortest_paths(&net);
    SquareMatrix::from_fn(zones.len(), |i, j| if i == j { zones[i].traverse_distance } else { paths.distance[(i, j)] })
}

/// Random gravity-model scenario with an urban core near the centre.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Scenario> {
    if cfg.m < 2 {
        return Err(Error::InvalidArgument("generator needs at least 2 zones".into()));
    }
    if !(cfg.congested_fraction > 0.0 && cfg.congested_fraction < 1.0) {
        return Err(Error::InvalidArgument("congested_fraction must lie in (0, 1)".into()));
    }
    if !(cfg.mode_share > 0.0 && cfg.mode_share < 1.0) {
        return Err(Error::InvalidArgument("mode_share must lie in (0, 1)".into()));
    }
    if !(cfg.demand_scale > 0.0) || !(cfg.gravity_exponent >= 0.0) || !(cfg.underserved_markup > 0.0) {
        return Err(Error::InvalidArgument("demand_scale, gravity_exponent and markup must be positive".into()));
    }
    let m = cfg.m;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side = 1.6 * (m as f64).sqrt();
    let pos: Vec<(f64, f64)> = (0..m).map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side)).collect();
    let centre = (side / 2.0, side / 2.0);
    let mut by_centre: Vec<usize> = (0..m).collect();
    by_centre.sort_by(|&a, &b| euclid(pos[a], centre).total_cmp(&euclid(pos[b], centre)).then(a.cmp(&b)));
    let n_core = ((cfg.congested_fraction * m as f64).round() as usize).clamp(1, m - 1);
    let mut core = vec![false; m];
    for &z in &by_centre[..n_core] {
        core[z] = true;
    }
    let zones: Vec<Zone> =
        (0..m).map(|i| Zone::new(i, core[i], if core[i] { CORE_TRAVERSE } else { REMOTE_TRAVERSE }).named(format!("z{i}"))).collect();
    let edges = knn_edges(&pos, 3);
    let miles = trip_miles(&zones, &edges);
    let mass: Vec<f64> = (0..m).map(|i| (if core[i] { 3.0 } else { 1.0 }) * (0.5 + rng.random::<f64>())).collect();
    let mut lambda0 = SquareMatrix::from_fn(m, |i, j| mass[i] * mass[j] / miles[(i, j)].powf(cfg.gravity_exponent));
    let scale = cfg.demand_scale / cfg.mode_share / lambda0.total();
    lambda0 = lambda0.map(|x| x * scale);
    // the remote zones farthest from the centre are underserved
    let remote: Vec<usize> = by_centre.iter().rev().copied().filter(|&z| !core[z]).collect();
    let mut underserved: Vec<usize> = remote[..remote.len() / 3].to_vec();
    underserved.sort_unstable();
    let mut meta = Map::new();
    meta.insert("generator".into(), Value::from("synthetic"));
    meta.insert("seed".into(), Value::from(cfg.seed));
    Ok(Scenario {
        zones,
        edges,
        lambda0,
        alt_cost: AltCost::PerMile { rate_per_mile: cfg.rate_per_mile, underserved, markup: cfg.underserved_markup },
        params: BehaviorParams::calibrated(),
        meta,
        charge_weights: None,
    })
}

/// `n x n` lattice of 1-mile zones with the central block congested.
pub fn grid_preset(n: usize, seed: u64) -> Result<Scenario> {
    if n < 2 {
        return Err(Error::InvalidArgument("grid side must be at least 2".into()));
    }
    let m = n * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = (n as f64 - 1.0) / 2.0;
    let radius = (n as f64 / 4.0).max(0.5);
    let core: Vec<bool> = (0..m)
        .map(|k| {
            let (x, y) = ((k % n) as f64, (k / n) as f64);
            (x - mid).abs() <= radius && (y - mid).abs() <= radius
        })
        .collect();
    let zones: Vec<Zone> = (0..m)
        .map(|k| Zone::new(k, core[k], if core[k] { CORE_TRAVERSE } else { REMOTE_TRAVERSE }).named(format!("g{}_{}", k % n, k / n)))
        .collect();
    let mut edges = Vec::new();
    for k in 0..m {
        if k % n + 1 < n {
            edges.push(Edge(k, k + 1, 1.0));
        }
        if k + n < m {
            edges.push(Edge(k, k + n, 1.0));
        }
    }
    let miles = trip_miles(&zones, &edges);
    let mass: Vec<f64> = (0..m).map(|k| (if core[k] { 3.0 } else { 1.0 }) * (0.8 + 0.4 * rng.random::<f64>())).collect();
    let mut lambda0 = SquareMatrix::from_fn(m, |i, j| mass[i] * mass[j] / miles[(i, j)]);
    let scale = 156.0 / 0.15 * (m as f64 / 19.0) / lambda0.total();
    lambda0 = lambda0.map(|x| x * scale);
    let corners = vec![0, n - 1, m - n, m - 1];
    let mut meta = Map::new();
    meta.insert("generator".into(), Value::from("grid"));
    meta.insert("seed".into(), Value::from(seed));
    Ok(Scenario {
        zones,
        edges,
        lambda0,
        alt_cost: AltCost::PerMile { rate_per_mile: ALT_RATE_PER_MILE, underserved: corners, markup: 1.5 },
        params: BehaviorParams::calibrated(),
        meta,
        charge_weights: None,
    })
}

struct SfZone {
    zip: &'static str,
    core: bool,
    pos: (f64, f64),
    /// Observed trips/min to the congested and to the remote area.
    out_c: f64,
    out_r: f64,
    underserved: bool,
    /// Other zip codes folded into this zone.
    merged: &'static [&'static str],
}

const SF_ZONES: [SfZone; 19] = [
    SfZone { zip: "94104", core: true, pos: (6.3, 5.3), out_c: 8.14, out_r: 1.70, underserved: false, merged: &["94105", "94111"] },
    SfZone { zip: "94103", core: true, pos: (5.4, 4.3), out_c: 9.55, out_r: 3.01, underserved: false, merged: &[] },
    SfZone { zip: "94109", core: true, pos: (5.0, 5.6), out_c: 8.77, out_r: 4.28, underserved: false, merged: &[] },
    SfZone { zip: "94115", core: false, pos: (4.1, 5.1), out_c: 3.33, out_r: 5.23, underserved: false, merged: &[] },
    SfZone { zip: "94118", core: false, pos: (2.8, 5.0), out_c: 4.63, out_r: 6.89, underserved: true, merged: &[] },
    SfZone { zip: "94123", core: false, pos: (4.3, 6.3), out_c: 3.44, out_r: 5.48, underserved: false, merged: &[] },
    SfZone { zip: "94108", core: true, pos: (5.8, 6.0), out_c: 10.30, out_r: 3.41, underserved: false, merged: &["94133"] },
    SfZone { zip: "94121", core: false, pos: (1.0, 5.2), out_c: 1.43, out_r: 2.40, underserved: true, merged: &[] },
    SfZone { zip: "94102", core: true, pos: (5.1, 4.8), out_c: 8.08, out_r: 3.86, underserved: false, merged: &[] },
    SfZone { zip: "94117", core: false, pos: (3.6, 4.3), out_c: 2.24, out_r: 5.73, underserved: false, merged: &[] },
    SfZone { zip: "94122", core: false, pos: (1.8, 3.7), out_c: 1.79, out_r: 6.65, underserved: false, merged: &[] },
    SfZone { zip: "94114", core: false, pos: (4.1, 3.4), out_c: 3.02, out_r: 5.51, underserved: false, merged: &[] },
    SfZone { zip: "94107", core: true, pos: (6.0, 3.6), out_c: 6.96, out_r: 3.24, underserved: false, merged: &[] },
    SfZone { zip: "94110", core: false, pos: (5.0, 2.6), out_c: 3.43, out_r: 8.86, underserved: true, merged: &[] },
    SfZone { zip: "94131", core: false, pos: (3.6, 2.3), out_c: 1.49, out_r: 2.99, underserved: false, merged: &[] },
    SfZone { zip: "94116", core: false, pos: (1.6, 2.4), out_c: 0.94, out_r: 2.15, underserved: false, merged: &[] },
    SfZone { zip: "94124", core: false, pos: (6.3, 1.6), out_c: 0.88, out_r: 1.77, underserved: true, merged: &[] },
    SfZone { zip: "94132", core: false, pos: (1.8, 0.8), out_c: 0.06, out_r: 1.76, underserved: true, merged: &[] },
    SfZone { zip: "94112", core: false, pos: (4.0, 0.8), out_c: 0.11, out_r: 3.11, underserved: true, merged: &[] },
];

/// Reference mode share used to scale observed trips up to potential demand.
const SF_MODE_SHARE: f64 = 0.15;
/// Potential trips/min implied by 156 trips/min at the reference share.
const SF_POTENTIAL: f64 = 156.0 / SF_MODE_SHARE;

/// 19-zone San Francisco-like scenario.
///
/// Zone positions are approximate zip-code centroids in miles. Potential
/// demand follows a gravity split whose per-origin totals to the congested
/// and remote areas match observed before-charge outflows.
pub fn sf_like_preset() -> Scenario {
    let m = SF_ZONES.len();
    let zones: Vec<Zone> = SF_ZONES
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let name = if z.merged.is_empty() { z.zip.to_string() } else { format!("{}+{}", z.zip, z.merged.join("+")) };
            Zone::new(i, z.core, if z.core { CORE_TRAVERSE } else { REMOTE_TRAVERSE }).named(name)
        })
        .collect();
    let pos: Vec<(f64, f64)> = SF_ZONES.iter().map(|z| z.pos).collect();
    let edges = knn_edges(&pos, 4);
    let miles = trip_miles(&zones, &edges);
    let attraction: Vec<f64> = SF_ZONES.iter().map(|z| z.out_c + z.out_r).collect();
    let mut lambda = SquareMatrix::zeros(m);
    for (i, zi) in SF_ZONES.iter().enumerate() {
        for (area, total) in [(true, zi.out_c), (false, zi.out_r)] {
            let w: Vec<f64> = (0..m).map(|j| if SF_ZONES[j].core == area { attraction[j] / miles[(i, j)] } else { 0.0 }).collect();
            let s: f64 = w.iter().sum();
            for j in 0..m {
                lambda[(i, j)] += total * w[j] / s;
            }
        }
    }
    let scale = SF_POTENTIAL / lambda.total();
    let lambda0 = lambda.map(|x| x * scale);
    let underserved = (0..m).filter(|&i| SF_ZONES[i].underserved).collect();
    let mut meta = Map::new();
    meta.insert("generator".into(), Value::from("sf-like"));
    Scenario {
        zones,
        edges,
        lambda0,
        alt_cost: AltCost::PerMile { rate_per_mile: ALT_RATE_PER_MILE, underserved, markup: 1.5 },
        params: BehaviorParams::calibrated(),
        meta,
        charge_weights: None,
    }
}

/// Zip codes covered by the congested zones of [`sf_like_preset`].
pub fn sf_like_core_zip_codes() -> Vec<&'static str> {
    SF_ZONES.iter().filter(|z| z.core).flat_map(|z| std::iter::once(z.zip).chain(z.merged.iter().copied())).collect()
}
