//! Zone graph, all-pairs shortest paths and the congested/remote split of
//! every origin-destination distance.

use crate::error::{Error, Result};
use crate::numerics::SquareMatrix;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: usize,
    #[serde(rename = "congested")]
    pub is_congested: bool,
    /// Average distance (miles) needed to cross the zone.
    #[serde(rename = "traverse_miles")]
    pub traverse_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Zone {
    pub fn new(id: usize, is_congested: bool, traverse_distance: f64) -> Self {
        Self { id, is_congested, traverse_distance, name: None }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

/// Undirected road link between two zone centroids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    zones: Vec<Zone>,
    edges: Vec<Edge>,
}

impl Network {
    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of zones.
    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn is_congested(&self, zone: usize) -> bool {
        self.zones[zone].is_congested
    }

    pub fn congested_zones(&self) -> Vec<usize> {
        self.zones.iter().filter(|z| z.is_congested).map(|z| z.id).collect()
    }

    pub fn remote_zones(&self) -> Vec<usize> {
        self.zones.iter().filter(|z| !z.is_congested).map(|z| z.id).collect()
    }

    /// True when both the congested and the remote area are nonempty.
    pub fn has_cordon(&self) -> bool {
        self.zones.iter().any(|z| z.is_congested) && self.zones.iter().any(|z| !z.is_congested)
    }
}

/// Validates zones and edges and assembles a connected [`Network`].
pub fn build_network(mut zones: Vec<Zone>, edges: Vec<Edge>) -> Result<Network> {
    let m = zones.len();
    if m == 0 {
        return Err(Error::Validation { invariant: "at least one zone".into() });
    }
    let mut seen = vec![false; m];
    for z in &zones {
        if z.id >= m {
            return Err(Error::NonContiguousZoneIds { expected: m, found: z.id });
        }
        if seen[z.id] {
            return Err(Error::DuplicateZoneId(z.id));
        }
        seen[z.id] = true;
        if !(z.traverse_distance > 0.0) || !z.traverse_distance.is_finite() {
            return Err(Error::NonPositiveDistance { what: format!("traverse distance of zone {}", z.id), value: z.traverse_distance });
        }
    }
    zones.sort_by_key(|z| z.id);

    let mut pairs = HashSet::new();
    for &Edge(a, b, d) in &edges {
        if a >= m || b >= m {
            return Err(Error::UnknownZone { from: a, to: b });
        }
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonPositiveDistance { what: format!("edge ({a}, {b})"), value: d });
        }
        if !pairs.insert((a.min(b), a.max(b))) {
            return Err(Error::DuplicateEdge { from: a, to: b });
        }
    }

    let graph = to_graph(m, &edges);
    let reach = petgraph::algo::dijkstra(&graph, NodeIndex::new(0), None, |e| *e.weight());
    if let Some(unreachable) = (0..m).find(|&k| !reach.contains_key(&NodeIndex::new(k))) {
        return Err(Error::DisconnectedGraph { unreachable });
    }
    Ok(Network { zones, edges })
}

fn to_graph(m: usize, edges: &[Edge]) -> UnGraph<(), f64> {
    let mut g = UnGraph::with_capacity(m, edges.len());
    for _ in 0..m {
        g.add_node(());
    }
    for &Edge(a, b, d) in edges {
        g.add_edge(NodeIndex::new(a), NodeIndex::new(b), d);
    }
    g
}

/// Shortest-path geometry for every ordered zone pair.
#[derive(Debug, Clone)]
pub struct PathTable {
    pub distance: SquareMatrix,
    /// Miles of each shortest path attributed to the congested area.
    pub congested_miles: SquareMatrix,
    /// Miles of each shortest path attributed to the remote area.
    pub remote_miles: SquareMatrix,
    paths: Vec<Vec<usize>>,
    m: usize,
}

impl PathTable {
    /// Zone sequence of the shortest path from `i` to `j` (inclusive).
    pub fn path(&self, i: usize, j: usize) -> &[usize] {
        &self.paths[i * self.m + j]
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

/// All-pairs shortest paths with lexicographic tie-breaking.
///
/// Each edge's mileage is split half to the class of each endpoint zone.
pub fn shortest_paths(network: &Network) -> PathTable {
    let m = network.len();
    let graph = to_graph(m, &network.edges);
    let fw = petgraph::algo::floyd_warshall(&graph, |e| *e.weight()).expect("edge weights are positive");
    let dist = SquareMatrix::from_fn(m, |i, j| {
        if i == j {
            0.0
        } else {
            fw.get(&(NodeIndex::new(i), NodeIndex::new(j))).copied().unwrap_or(f64::INFINITY)
        }
    });

    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for &Edge(a, b, d) in &network.edges {
        neighbors[a].push((b, d));
        neighbors[b].push((a, d));
    }
    for n in &mut neighbors {
        n.sort_by_key(|x| x.0);
    }

    let mut paths = Vec::with_capacity(m * m);
    let mut cmiles = SquareMatrix::zeros(m);
    let mut rmiles = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let mut path = vec![i];
            let (mut c, mut r) = (0.0, 0.0);
            let mut cur = i;
            while cur != j {
                let target = dist[(cur, j)];
                let tol = 1e-9 * target.max(1.0);
                // smallest-index neighbor that stays on a shortest path
                let &(next, w) = neighbors[cur]
                    .iter()
                    .find(|&&(v, w)| (w + dist[(v, j)] - target).abs() <= tol)
                    .expect("a shortest path continues through some neighbor");
                for end in [cur, next] {
                    if network.is_congested(end) {
                        c += 0.5 * w;
                    } else {
                        r += 0.5 * w;
                    }
                }
                path.push(next);
                cur = next;
            }
            cmiles[(i, j)] = c;
            // keep d = dC + dR exact in floating point
            rmiles[(i, j)] = dist[(i, j)] - c;
            debug_assert!((rmiles[(i, j)] - r).abs() <= 1e-9 * dist[(i, j)].max(1.0));
            paths.push(path);
        }
    }
    PathTable { distance: dist, congested_miles: cmiles, remote_miles: rmiles, paths, m }
}

/// Minutes needed to cross a zone at `speed` mph.
pub fn traverse_time(zone: &Zone, speed: f64) -> Result<f64> {
    if !(speed > 0.0) {
        return Err(Error::NonPositiveSpeed(speed));
    }
    Ok(60.0 * zone.traverse_distance / speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(congested: [bool; 3]) -> Network {
        let zones = (0..3).map(|k| Zone::new(k, congested[k], 1.0)).collect();
        build_network(zones, vec![Edge(0, 1, 2.0), Edge(1, 2, 3.0)]).unwrap()
    }

    #[test]
    fn minimal_graphs_are_accepted() {
        let net = build_network(vec![Zone::new(0, true, 1.0), Zone::new(1, false, 1.0)], vec![Edge(0, 1, 3.0)]).unwrap();
        assert_eq!(net.len(), 2);
        assert_eq!(line([false; 3]).len(), 3);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let zones = (0..3).map(|k| Zone::new(k, false, 1.0)).collect();
        let err = build_network(zones, vec![Edge(0, 1, 1.0)]).unwrap_err();
        assert_eq!(err, Error::DisconnectedGraph { unreachable: 2 });
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let z = || vec![Zone::new(0, false, 1.0), Zone::new(1, false, 1.0)];
        assert!(matches!(build_network(z(), vec![Edge(0, 1, 0.0)]), Err(Error::NonPositiveDistance { .. })));
        assert!(matches!(build_network(z(), vec![Edge(0, 0, 1.0)]), Err(Error::SelfLoop(0))));
        assert!(matches!(build_network(z(), vec![Edge(0, 1, 1.0), Edge(1, 0, 2.0)]), Err(Error::DuplicateEdge { .. })));
        let dup = vec![Zone::new(0, false, 1.0), Zone::new(0, false, 1.0)];
        assert_eq!(build_network(dup, vec![]).unwrap_err(), Error::DuplicateZoneId(0));
    }

    #[test]
    fn path_graph_distances() {
        let t = shortest_paths(&line([false; 3]));
        assert_eq!(t.distance[(0, 2)], 5.0);
        assert_eq!(t.path(0, 2), &[0, 1, 2]);
        assert_eq!(t.path(2, 0), &[2, 1, 0]);
        for i in 0..3 {
            assert_eq!(t.distance[(i, i)], 0.0);
            assert_eq!(t.path(i, i), &[i]);
        }
    }

    #[test]
    fn half_edge_attribution() {
        let t = shortest_paths(&line([true, false, false]));
        assert_relative_eq!(t.congested_miles[(0, 2)], 1.0);
        assert_relative_eq!(t.remote_miles[(0, 2)], 4.0);
    }

    #[test]
    fn ties_take_lexicographically_smallest_sequence() {
        // square 0-1-3 and 0-2-3, equal lengths
        let zones = (0..4).map(|k| Zone::new(k, false, 1.0)).collect();
        let edges = vec![Edge(0, 2, 1.0), Edge(2, 3, 1.0), Edge(0, 1, 1.0), Edge(1, 3, 1.0)];
        let t = shortest_paths(&build_network(zones, edges).unwrap());
        assert_eq!(t.path(0, 3), &[0, 1, 3]);
        assert_eq!(t.path(3, 0), &[3, 1, 0]);
    }

    #[test]
    fn traverse_time_examples() {
        let z = Zone::new(0, false, 1.0);
        assert_relative_eq!(traverse_time(&z, 20.0).unwrap(), 3.0);
        assert_relative_eq!(traverse_time(&z, 15.0).unwrap(), 4.0);
        let half = Zone::new(0, true, 0.5);
        assert_relative_eq!(traverse_time(&half, 15.0 / 1.1).unwrap(), 2.2, epsilon = 1e-12);
        assert_eq!(traverse_time(&z, 0.0).unwrap_err(), Error::NonPositiveSpeed(0.0));
    }
}
