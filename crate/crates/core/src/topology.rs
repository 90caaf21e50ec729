//! Ground-to-satellite visibility, the +grid ISL mesh, and routed latencies.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::orbits::{geodetic_to_ecef, ConstellationState, EcefPoint, GroundSite, ShellSpec};

pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

fn default_min_elevation() -> f64 {
    25.0
}
fn default_speed() -> f64 {
    SPEED_OF_LIGHT_KM_S
}
fn default_bandwidth() -> f64 {
    10.0
}

/// How a ground site reaches satellites other than its access satellite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attachment {
    /// All traffic enters the network through the access satellite.
    Access,
    /// Any visible satellite may be used as the uplink.
    #[default]
    AllVisible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    #[serde(default = "default_min_elevation")]
    pub min_elevation_deg: f64,
    #[serde(default = "default_speed")]
    pub propagation_speed_km_s: f64,
    /// Recorded for cost models only; no queuing is simulated.
    #[serde(default = "default_bandwidth")]
    pub isl_bandwidth_gbps: f64,
    #[serde(default = "default_bandwidth")]
    pub gsl_bandwidth_gbps: f64,
    #[serde(default)]
    pub attachment: Attachment,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            min_elevation_deg: default_min_elevation(),
            propagation_speed_km_s: default_speed(),
            isl_bandwidth_gbps: default_bandwidth(),
            gsl_bandwidth_gbps: default_bandwidth(),
            attachment: Attachment::AllVisible,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..90.0).contains(&self.min_elevation_deg) {
            return Err(Error::Config(format!(
                "min_elevation_deg must be in [0, 90), got {}",
                self.min_elevation_deg
            )));
        }
        if !(self.propagation_speed_km_s > 0.0 && self.propagation_speed_km_s.is_finite()) {
            return Err(Error::Config("propagation_speed_km_s must be positive".into()));
        }
        Ok(())
    }

    /// One-way delay in milliseconds over `km`.
    pub fn delay_ms(&self, km: f64) -> f64 {
        km / self.propagation_speed_km_s * 1000.0
    }
}

/// Slant range in km if the satellite is at or above the minimum elevation.
pub fn visibility(sat: &EcefPoint, site: &EcefPoint, model: &LinkModel) -> Option<f64> {
    let los = *sat - *site;
    let range = los.norm();
    let site_r = site.norm();
    if range == 0.0 || site_r == 0.0 {
        return None;
    }
    let sin_elev = los.dot(site) / (range * site_r);
    let min = model.min_elevation_deg.to_radians().sin();
    (sin_elev >= min).then_some(range)
}

pub fn elevation_deg(sat: &EcefPoint, site: &EcefPoint) -> f64 {
    let los = *sat - *site;
    (los.dot(site) / (los.norm() * site.norm())).asin().to_degrees()
}

/// Longest usable slant range for a shell altitude and elevation mask.
pub fn max_slant_range_km(altitude_km: f64, min_elevation_deg: f64) -> f64 {
    let r = crate::orbits::EARTH_RADIUS_KM;
    let s = min_elevation_deg.to_radians().sin();
    -r * s + (r * r * s * s + 2.0 * r * altitude_km + altitude_km * altitude_km).sqrt()
}

/// +grid links: in-plane ring plus same-slot links to both neighboring planes.
/// Edges are `(a, b)` with `a < b`, sorted and deduplicated.
pub fn build_isl_grid(spec: &ShellSpec) -> Vec<(u32, u32)> {
    let mut edges = BTreeSet::new();
    let mut push = |a: u32, b: u32| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    for plane in 0..spec.planes {
        for slot in 0..spec.sats_per_plane {
            let me = spec.satellite_at(plane, slot).flat_id;
            let next_slot = spec.satellite_at(plane, (slot + 1) % spec.sats_per_plane);
            push(me, next_slot.flat_id);
            let next_plane = spec.satellite_at((plane + 1) % spec.planes, slot);
            push(me, next_plane.flat_id);
        }
    }
    edges.into_iter().collect()
}

/// ISL graph weighted by one-way delay in milliseconds.
pub fn isl_graph(state: &ConstellationState, edges: &[(u32, u32)], model: &LinkModel) -> Graph {
    Graph::from_edges(
        state.len(),
        edges.iter().map(|&(a, b)| {
            let d = state.position(a).distance(&state.position(b));
            (a, b, model.delay_ms(d))
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Access {
    pub sat: u32,
    pub slant_range_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteView {
    pub site_id: String,
    pub access: Option<Access>,
    /// Visible satellites, ascending flat id.
    pub visible: Vec<u32>,
    /// One-way milliseconds per flat id; empty without access, infinite when unreachable.
    latency_ms: Vec<f64>,
}

impl SiteView {
    pub fn latency_ms(&self, sat: u32) -> Option<f64> {
        self.latency_ms
            .get(sat as usize)
            .copied()
            .filter(|l| l.is_finite())
    }

    /// `(flat_id, one-way ms)` for every reachable satellite.
    pub fn latencies(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.latency_ms
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .map(|(i, &l)| (i as u32, l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    pub t: f64,
    pub sites: Vec<SiteView>,
}

impl NetworkSnapshot {
    pub fn site(&self, site_id: &str) -> Option<&SiteView> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }
}

/// Access satellite: minimum slant range among visible ones, lowest id on ties.
pub fn access_for(
    state: &ConstellationState,
    site: &EcefPoint,
    model: &LinkModel,
) -> (Option<Access>, Vec<u32>) {
    let mut visible = Vec::new();
    let mut best: Option<Access> = None;
    for (i, p) in state.positions.iter().enumerate() {
        if let Some(range) = visibility(p, site, model) {
            let sat = i as u32;
            visible.push(sat);
            if best.map_or(true, |b| range < b.slant_range_km) {
                best = Some(Access {
                    sat,
                    slant_range_km: range,
                });
            }
        }
    }
    (best, visible)
}

pub fn snapshot(
    state: &ConstellationState,
    sites: &[GroundSite],
    edges: &[(u32, u32)],
    model: &LinkModel,
) -> NetworkSnapshot {
    let graph = isl_graph(state, edges, model);
    let mut cache: Vec<(u32, std::rc::Rc<Vec<f64>>)> = Vec::new();
    let views = sites
        .iter()
        .map(|site| {
            let ground = geodetic_to_ecef(site);
            let (access, visible) = access_for(state, &ground, model);
            let latency_ms = match (access, model.attachment) {
                (None, _) => Vec::new(),
                (Some(a), Attachment::Access) => {
                    let isl = match cache.iter().find(|(s, _)| *s == a.sat) {
                        Some((_, d)) => d.clone(),
                        None => {
                            let d = std::rc::Rc::new(graph.shortest_paths(a.sat));
                            cache.push((a.sat, d.clone()));
                            d
                        }
                    };
                    let uplink = model.delay_ms(a.slant_range_km);
                    isl.iter().map(|d| uplink + d).collect()
                }
                (Some(_), Attachment::AllVisible) => {
                    let sources: Vec<(u32, f64)> = visible
                        .iter()
                        .map(|&v| (v, model.delay_ms(ground.distance(&state.position(v)))))
                        .collect();
                    graph.shortest_paths_multi(&sources)
                }
            };
            SiteView {
                site_id: site.site_id.clone(),
                access,
                visible,
                latency_ms,
            }
        })
        .collect();
    NetworkSnapshot {
        t: state.t,
        sites: views,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::{propagate, EARTH_RADIUS_KM};
    use proptest::prelude::*;

    /// Exhaustive simple-path enumeration.
    fn brute_force(n: usize, edges: &[(u32, u32, f64)], src: u32) -> Vec<f64> {
        let mut best = vec![f64::INFINITY; n];
        let mut visited = vec![false; n];
        fn walk(
            node: u32,
            cost: f64,
            edges: &[(u32, u32, f64)],
            visited: &mut [bool],
            best: &mut [f64],
        ) {
            if cost < best[node as usize] {
                best[node as usize] = cost;
            }
            visited[node as usize] = true;
            for &(a, b, w) in edges {
                let next = if a == node {
                    b
                } else if b == node {
                    a
                } else {
                    continue;
                };
                if !visited[next as usize] {
                    walk(next, cost + w, edges, visited, best);
                }
            }
            visited[node as usize] = false;
        }
        walk(src, 0.0, edges, &mut visited, &mut best);
        best
    }

    fn edges_strategy(n: u32, max_edges: usize) -> impl Strategy<Value = Vec<(u32, u32, f64)>> {
        prop::collection::vec((0..n, 0..n, 0.0f64..10.0), 0..=max_edges)
            .prop_map(|v| v.into_iter().filter(|(a, b, _)| a != b).collect())
    }

    proptest! {
        #[test]
        fn dijkstra_matches_path_enumeration(edges in edges_strategy(7, 14), src in 0u32..7) {
            let g = Graph::from_edges(7, edges.iter().copied());
            let d = g.shortest_paths(src);
            let o = brute_force(7, &edges, src);
            for (x, y) in d.iter().zip(&o) {
                prop_assert!((x.is_infinite() && y.is_infinite()) || (x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zenith_satellite_visible_at_altitude_range() {
        let site = EcefPoint::new(EARTH_RADIUS_KM, 0.0, 0.0);
        let sat = EcefPoint::new(EARTH_RADIUS_KM + 550.0, 0.0, 0.0);
        let r = visibility(&sat, &site, &LinkModel::default()).unwrap();
        assert!((r - 550.0).abs() < 1e-9);
    }

    #[test]
    fn antipodal_satellite_invisible() {
        let site = EcefPoint::new(EARTH_RADIUS_KM, 0.0, 0.0);
        let sat = EcefPoint::new(-(EARTH_RADIUS_KM + 550.0), 0.0, 0.0);
        assert!(visibility(&sat, &site, &LinkModel::default()).is_none());
    }

    #[test]
    fn max_slant_range_for_550km_at_25deg() {
        let d = max_slant_range_km(550.0, 25.0);
        assert!((d - 1123.3).abs() < 0.1, "{d}");
        let ms = LinkModel::default().delay_ms(d);
        assert!((ms - 3.747).abs() < 0.01, "{ms}");
        // A satellite at exactly that range sits on the mask.
        let r = EARTH_RADIUS_KM;
        let site = EcefPoint::new(r, 0.0, 0.0);
        let elev = 25f64.to_radians();
        let sat = EcefPoint::new(r + d * elev.sin(), d * elev.cos(), 0.0);
        assert!((sat.norm() - (r + 550.0)).abs() < 1e-6);
        assert!((elevation_deg(&sat, &site) - 25.0).abs() < 1e-9);
    }

    #[test]
    fn grid_edge_counts() {
        let ring = ShellSpec {
            planes: 1,
            phase_offset: 0,
            ..ShellSpec::starlink_phase1()
        };
        assert_eq!(build_isl_grid(&ring).len(), 22);
        assert_eq!(build_isl_grid(&ShellSpec::starlink_phase1()).len(), 3168);
        let tiny = ShellSpec {
            planes: 2,
            sats_per_plane: 2,
            phase_offset: 0,
            ..ShellSpec::starlink_phase1()
        };
        let e = build_isl_grid(&tiny);
        assert_eq!(e, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let single = ShellSpec {
            planes: 1,
            sats_per_plane: 1,
            phase_offset: 0,
            ..ShellSpec::starlink_phase1()
        };
        assert!(build_isl_grid(&single).is_empty());
    }

    const SNAPSHOT_SITES: [(f64, f64); 2] = [(47.67, -122.12), (-0.18, -78.47)];

    fn shell_snapshot(t: f64, model: &LinkModel) -> (NetworkSnapshot, ConstellationState, Vec<(u32, u32)>) {
        let spec = ShellSpec::starlink_phase1();
        let edges = build_isl_grid(&spec);
        let state = propagate(&spec, t);
        let sites: Vec<GroundSite> = SNAPSHOT_SITES
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| GroundSite::client(format!("s{i}"), lat, lon))
            .collect();
        (snapshot(&state, &sites, &edges, model), state, edges)
    }

    #[test]
    fn snapshot_access_invariants() {
        let model = LinkModel {
            attachment: Attachment::Access,
            ..LinkModel::default()
        };
        for t in [0.0, 300.0, 900.0] {
            let (snap, state, edges) = shell_snapshot(t, &model);
            let graph = isl_graph(&state, &edges, &model);
            for view in &snap.sites {
                let a = view.access.expect("coverage at mid latitudes");
                let access_lat = view.latency_ms(a.sat).unwrap();
                assert!((access_lat - model.delay_ms(a.slant_range_km)).abs() < 1e-12);
                for (_, l) in view.latencies() {
                    assert!(l >= access_lat - 1e-12);
                }
                // Routed latency obeys the triangle property over ISL hops.
                let from_access = graph.shortest_paths(a.sat);
                for s in [0u32, 100, 777, 1583] {
                    let ds = graph.shortest_paths(s);
                    for s2 in [5u32, 400, 1200] {
                        let l = view.latency_ms(s2).unwrap();
                        assert!(l <= view.latency_ms(s).unwrap() + ds[s2 as usize] + 1e-9);
                    }
                    assert!((view.latency_ms(s).unwrap() - access_lat - from_access[s as usize]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn snapshot_all_visible_takes_best_uplink() {
        let model = LinkModel::default();
        for t in [0.0, 450.0] {
            let (snap, state, edges) = shell_snapshot(t, &model);
            let graph = isl_graph(&state, &edges, &model);
            for (view, site) in snap.sites.iter().zip(&SNAPSHOT_SITES) {
                let p = geodetic_to_ecef(&GroundSite::client("x", site.0, site.1));
                let (_, visible) = access_for(&state, &p, &model);
                let per_uplink: Vec<Vec<f64>> = visible.iter().map(|&v| graph.shortest_paths(v)).collect();
                for s in [0u32, 250, 777, 1583] {
                    let oracle = visible
                        .iter()
                        .zip(&per_uplink)
                        .map(|(&v, d)| model.delay_ms(p.distance(&state.position(v))) + d[s as usize])
                        .fold(f64::INFINITY, f64::min);
                    assert!((view.latency_ms(s).unwrap() - oracle).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn access_satellite_is_nearest_visible() {
        let spec = ShellSpec::starlink_phase1();
        let model = LinkModel::default();
        let state = propagate(&spec, 123.0);
        let site = geodetic_to_ecef(&GroundSite::client("r", 47.67, -122.12));
        let (access, visible) = access_for(&state, &site, &model);
        let a = access.unwrap();
        for v in visible {
            assert!(site.distance(&state.position(v)) >= a.slant_range_km);
        }
    }

    #[test]
    fn raising_elevation_never_grows_visible_set() {
        let spec = ShellSpec::starlink_phase1();
        let state = propagate(&spec, 600.0);
        let site = geodetic_to_ecef(&GroundSite::client("r", 47.67, -122.12));
        let mut prev: Option<Vec<u32>> = None;
        for elev in [0.0, 10.0, 25.0, 40.0, 60.0, 80.0] {
            let model = LinkModel {
                min_elevation_deg: elev,
                ..LinkModel::default()
            };
            let (_, vis) = access_for(&state, &site, &model);
            if let Some(p) = &prev {
                assert!(vis.iter().all(|v| p.contains(v)));
            }
            prev = Some(vis);
        }
    }

    #[test]
    fn isl_delays_are_symmetric() {
        let spec = ShellSpec::starlink_phase1();
        let model = LinkModel::default();
        let state = propagate(&spec, 50.0);
        let graph = isl_graph(&state, &build_isl_grid(&spec), &model);
        let d3 = graph.shortest_paths(3);
        let d900 = graph.shortest_paths(900);
        assert!((d3[900] - d900[3]).abs() < 1e-9);
    }

    #[test]
    fn overhead_pass_round_trip() {
        let rtt = 2.0 * LinkModel::default().delay_ms(550.0);
        assert!((rtt - 3.669).abs() < 1e-3, "{rtt}");
    }
}
