//! Bundled scenarios: single client, IoT buoys, and a regional CDN.
//!
//! Site lists are approximations: rounded town coordinates for the CDN and a
//! regular lattice for the buoys. None of them is an exact deployment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::orbits::{GroundSite, ShellSpec, SiteRole, EARTH_ROTATION_RAD_S};
use crate::strategies::Cardinality;
use crate::traces::ScenarioConfig;

pub const REDMOND: (f64, f64) = (47.67, -122.12);

/// Content origin for the CDN scenario, Umatilla County, OR.
pub const UMATILLA: (f64, f64) = (45.92, -119.34);

/// 30 buoy positions on a 4° × 9° lattice spanning 40–56°N, 180–135°W, a
/// stand-in for the tsunami buoy network of the northern Pacific.
pub const IOT_BUOYS: [(&str, f64, f64); 30] = [
    ("buoy-01", 40.00, 180.00),
    ("buoy-02", 44.00, 180.00),
    ("buoy-03", 48.00, 180.00),
    ("buoy-04", 52.00, 180.00),
    ("buoy-05", 56.00, 180.00),
    ("buoy-06", 40.00, -171.00),
    ("buoy-07", 44.00, -171.00),
    ("buoy-08", 48.00, -171.00),
    ("buoy-09", 52.00, -171.00),
    ("buoy-10", 56.00, -171.00),
    ("buoy-11", 40.00, -162.00),
    ("buoy-12", 44.00, -162.00),
    ("buoy-13", 48.00, -162.00),
    ("buoy-14", 52.00, -162.00),
    ("buoy-15", 56.00, -162.00),
    ("buoy-16", 40.00, -153.00),
    ("buoy-17", 44.00, -153.00),
    ("buoy-18", 48.00, -153.00),
    ("buoy-19", 52.00, -153.00),
    ("buoy-20", 56.00, -153.00),
    ("buoy-21", 40.00, -144.00),
    ("buoy-22", 44.00, -144.00),
    ("buoy-23", 48.00, -144.00),
    ("buoy-24", 52.00, -144.00),
    ("buoy-25", 56.00, -144.00),
    ("buoy-26", 40.00, -135.00),
    ("buoy-27", 44.00, -135.00),
    ("buoy-28", 48.00, -135.00),
    ("buoy-29", 52.00, -135.00),
    ("buoy-30", 56.00, -135.00),
];

/// Location of the tsunami warning centre that hosts the IoT scheduler.
pub const FORD_ISLAND: (f64, f64) = (21.36, -157.96);

/// Approximate positions of 50 towns in Washington, Oregon and the Idaho
/// panhandle.
pub const CDN_CLIENTS: [(&str, f64, f64); 50] = [
    ("seattle", 47.61, -122.33),
    ("tacoma", 47.25, -122.44),
    ("everett", 47.98, -122.20),
    ("bellingham", 48.75, -122.48),
    ("olympia", 47.04, -122.90),
    ("bremerton", 47.57, -122.63),
    ("port-angeles", 48.12, -123.43),
    ("aberdeen", 46.98, -123.82),
    ("vancouver-wa", 45.64, -122.66),
    ("longview", 46.14, -122.94),
    ("yakima", 46.60, -120.51),
    ("ellensburg", 46.99, -120.55),
    ("wenatchee", 47.42, -120.31),
    ("moses-lake", 47.13, -119.28),
    ("kennewick", 46.21, -119.14),
    ("walla-walla", 46.06, -118.34),
    ("spokane", 47.66, -117.43),
    ("pullman", 46.73, -117.18),
    ("omak", 48.41, -119.53),
    ("colville", 48.55, -117.91),
    ("portland", 45.52, -122.68),
    ("salem", 44.94, -123.04),
    ("eugene", 44.05, -123.09),
    ("corvallis", 44.56, -123.26),
    ("albany-or", 44.64, -123.11),
    ("astoria", 46.19, -123.83),
    ("tillamook", 45.46, -123.84),
    ("newport-or", 44.64, -124.05),
    ("coos-bay", 43.37, -124.22),
    ("roseburg", 43.22, -123.34),
    ("medford", 42.33, -122.87),
    ("klamath-falls", 42.22, -121.78),
    ("bend", 44.06, -121.32),
    ("the-dalles", 45.59, -121.18),
    ("hood-river", 45.71, -121.52),
    ("pendleton", 45.67, -118.79),
    ("la-grande", 45.32, -118.09),
    ("baker-city", 44.77, -117.83),
    ("burns", 43.59, -119.05),
    ("bellevue", 47.61, -122.20),
    ("renton", 47.48, -122.21),
    ("kent", 47.38, -122.23),
    ("lynnwood", 47.82, -122.31),
    ("gresham", 45.50, -122.43),
    ("hillsboro", 45.52, -122.99),
    ("lewiston", 46.42, -117.02),
    ("moscow-id", 46.73, -117.00),
    ("coeur-d-alene", 47.68, -116.78),
    ("sandpoint", 48.28, -116.55),
    ("beaverton", 45.49, -122.80),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bundled {
    SingleClient,
    SinglePlane,
    Iot,
    Cdn,
}

impl std::str::FromStr for Bundled {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-client" => Ok(Bundled::SingleClient),
            "single-plane" => Ok(Bundled::SinglePlane),
            "iot" => Ok(Bundled::Iot),
            "cdn" => Ok(Bundled::Cdn),
            _ => Err(Error::Config(format!(
                "unknown scenario {s:?} (expected single-client, single-plane, iot, cdn)"
            ))),
        }
    }
}

impl Bundled {
    pub fn name(self) -> &'static str {
        match self {
            Bundled::SingleClient => "single-client",
            Bundled::SinglePlane => "single-plane",
            Bundled::Iot => "iot",
            Bundled::Cdn => "cdn",
        }
    }

    pub fn cardinality(self) -> Cardinality {
        match self {
            Bundled::SingleClient | Bundled::SinglePlane => Cardinality::OneToOne,
            Bundled::Iot => Cardinality::ManyToOne,
            Bundled::Cdn => Cardinality::ManyToMany,
        }
    }

    /// 20-minute configuration; `seed` jitters the synthetic IoT/CDN sites.
    pub fn config(self, seed: Option<u64>) -> ScenarioConfig {
        match self {
            Bundled::SingleClient => single_client(),
            Bundled::SinglePlane => single_plane(),
            Bundled::Iot => iot(seed),
            Bundled::Cdn => cdn(seed),
        }
    }
}

fn redmond() -> GroundSite {
    GroundSite::client("redmond", REDMOND.0, REDMOND.1)
}

pub fn single_client() -> ScenarioConfig {
    ScenarioConfig::new(ShellSpec::starlink_phase1(), vec![redmond()], 1200)
}

/// One 22-satellite plane whose ground track crosses Redmond mid-trace.
pub fn single_plane() -> ScenarioConfig {
    let mut shell = ShellSpec {
        planes: 1,
        phase_offset: 0,
        ..ShellSpec::starlink_phase1()
    };
    shell.epoch_offset_s = overpass_epoch(&shell, REDMOND.0, REDMOND.1) - 600.0;
    ScenarioConfig::new(shell, vec![redmond()], 1200)
}

/// Time at which the ascending half of plane 0's ground track passes over
/// the given latitude/longitude.
pub fn overpass_epoch(shell: &ShellSpec, latitude_deg: f64, longitude_deg: f64) -> f64 {
    let inc = shell.inclination_deg.to_radians();
    let u = (latitude_deg.to_radians().sin() / inc.sin()).clamp(-1.0, 1.0).asin();
    let track_lon = (inc.cos() * u.sin()).atan2(u.cos());
    let needed = (track_lon - longitude_deg.to_radians()).rem_euclid(2.0 * std::f64::consts::PI);
    needed / EARTH_ROTATION_RAD_S
}

fn jittered(points: &[(&str, f64, f64)], seed: Option<u64>, spread_deg: f64) -> Vec<GroundSite> {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    points
        .iter()
        .map(|&(id, lat, lon)| {
            let (dlat, dlon) = match rng.as_mut() {
                Some(r) => (r.gen_range(-spread_deg..=spread_deg), r.gen_range(-spread_deg..=spread_deg)),
                None => (0.0, 0.0),
            };
            GroundSite::client(id, (lat + dlat).clamp(-90.0, 90.0), wrap_lon(lon + dlon))
        })
        .collect()
}

fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

fn with_role(id: &str, (lat, lon): (f64, f64), role: SiteRole) -> GroundSite {
    GroundSite {
        role,
        ..GroundSite::client(id, lat, lon)
    }
}

pub fn iot(seed: Option<u64>) -> ScenarioConfig {
    let mut sites = jittered(&IOT_BUOYS, seed, 0.5);
    sites.push(with_role("ford-island", FORD_ISLAND, SiteRole::Scheduler));
    ScenarioConfig::new(ShellSpec::starlink_phase1(), sites, 1200)
}

/// Keeps the 64 closest satellites per client; candidate sets never need more.
pub fn cdn(seed: Option<u64>) -> ScenarioConfig {
    let mut sites = jittered(&CDN_CLIENTS, seed, 0.1);
    sites.push(with_role("umatilla", UMATILLA, SiteRole::Origin));
    let mut c = ScenarioConfig::new(ShellSpec::starlink_phase1(), sites, 1200);
    c.candidates = Some(64);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::{geodetic_to_ecef, propagate};

    #[test]
    fn site_lists_are_valid() {
        for b in [Bundled::SingleClient, Bundled::SinglePlane, Bundled::Iot, Bundled::Cdn] {
            let c = b.config(Some(7));
            c.validate().unwrap();
            assert_eq!(c, b.config(Some(7)));
        }
        assert_eq!(iot(None).clients().len(), 30);
        assert_eq!(cdn(None).clients().len(), 50);
        assert_eq!(cdn(None).sites.len(), 51);
        assert_ne!(iot(None).sites, iot(Some(1)).sites);
    }

    #[test]
    fn overpass_puts_site_under_track() {
        let cfg = single_plane();
        let site = geodetic_to_ecef(&cfg.sites[0]);
        let state = propagate(&cfg.shell, 600.0);
        // The orbit normal is nearly perpendicular to the site direction.
        let (a, b) = (state.position(0), state.position(5));
        let n = (a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x);
        let norm = (n.0 * n.0 + n.1 * n.1 + n.2 * n.2).sqrt();
        let off = ((n.0 * site.x + n.1 * site.y + n.2 * site.z) / (norm * site.norm())).asin();
        assert!(off.to_degrees().abs() < 0.5, "{}", off.to_degrees());
    }

    #[test]
    fn longitude_wrapping() {
        assert_eq!(wrap_lon(181.0), -179.0);
        assert_eq!(wrap_lon(-180.0), 180.0);
        assert_eq!(wrap_lon(10.0), 10.0);
    }
}
