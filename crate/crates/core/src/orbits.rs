//! Circular-orbit propagation of a single Walker-style shell.
//!
//! Earth is a sphere of radius [`EARTH_RADIUS_KM`]; satellites follow
//! two-body circular orbits. Positions are produced both in an inertial
//! frame (for periodicity checks) and in the Earth-fixed frame used by
//! the network model.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Sub;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of Earth, km³/s².
pub const MU_EARTH: f64 = 398_600.4418;
/// Sidereal rotation rate, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;

pub const MIN_ALTITUDE_KM: f64 = 300.0;
pub const MAX_ALTITUDE_KM: f64 = 2000.0;

fn default_raan_spread() -> f64 {
    360.0
}

/// One constellation shell. Field names are the on-disk keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSpec {
    pub planes: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    #[serde(default)]
    pub phase_offset: u32,
    #[serde(default = "default_raan_spread")]
    pub raan_spread_deg: f64,
    #[serde(default)]
    pub epoch_offset_s: f64,
}

impl ShellSpec {
    /// First shell of phase I Starlink: 72 planes of 22 satellites at 550 km,
    /// 53°, Walker phasing F = 22.
    pub fn starlink_phase1() -> Self {
        ShellSpec {
            planes: 72,
            sats_per_plane: 22,
            altitude_km: 550.0,
            inclination_deg: 53.0,
            phase_offset: 22,
            raan_spread_deg: 360.0,
            epoch_offset_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes == 0 || self.sats_per_plane == 0 {
            return Err(Error::Config(
                "planes and sats_per_plane must be at least 1".into(),
            ));
        }
        check_altitude(self.altitude_km)?;
        if !(self.inclination_deg > 0.0 && self.inclination_deg <= 180.0) {
            return Err(Error::Config(format!(
                "inclination_deg must be in (0, 180], got {}",
                self.inclination_deg
            )));
        }
        if self.phase_offset >= self.planes {
            return Err(Error::Config(format!(
                "phase_offset must be below planes ({}), got {}",
                self.planes, self.phase_offset
            )));
        }
        if !self.raan_spread_deg.is_finite() || !self.epoch_offset_s.is_finite() {
            return Err(Error::Config(
                "raan_spread_deg and epoch_offset_s must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn satellite_count(&self) -> u32 {
        self.planes * self.sats_per_plane
    }

    pub fn orbit_radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }

    pub fn satellite(&self, flat_id: u32) -> SatelliteId {
        SatelliteId {
            plane_index: flat_id / self.sats_per_plane,
            slot_index: flat_id % self.sats_per_plane,
            flat_id,
        }
    }

    pub fn satellite_at(&self, plane_index: u32, slot_index: u32) -> SatelliteId {
        SatelliteId {
            plane_index,
            slot_index,
            flat_id: plane_index * self.sats_per_plane + slot_index,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ShellSpec =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("shell spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: ShellSpec =
            toml::from_str(s).map_err(|e| Error::Config(format!("shell spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn check_altitude(altitude_km: f64) -> Result<()> {
    if !(MIN_ALTITUDE_KM..=MAX_ALTITUDE_KM).contains(&altitude_km) {
        return Err(Error::Domain(format!(
            "altitude {altitude_km} km outside [{MIN_ALTITUDE_KM}, {MAX_ALTITUDE_KM}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SatelliteId {
    pub plane_index: u32,
    pub slot_index: u32,
    pub flat_id: u32,
}

impl fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.flat_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EcefPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        EcefPoint { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &EcefPoint) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn distance(&self, other: &EcefPoint) -> f64 {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Sub for EcefPoint {
    type Output = EcefPoint;

    fn sub(self, rhs: EcefPoint) -> EcefPoint {
        EcefPoint::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteRole {
    Client,
    Origin,
    Scheduler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSite {
    pub site_id: String,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub altitude_km: f64,
    pub role: SiteRole,
}

impl GroundSite {
    pub fn client(site_id: impl Into<String>, latitude_deg: f64, longitude_deg: f64) -> Self {
        GroundSite {
            site_id: site_id.into(),
            latitude_deg,
            longitude_deg,
            altitude_km: 0.0,
            role: SiteRole::Client,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.site_id.is_empty() {
            return Err(Error::Config("empty site_id".into()));
        }
        if !(-90.0..=90.0).contains(&self.latitude_deg) {
            return Err(Error::Config(format!(
                "site {}: latitude {} outside [-90, 90]",
                self.site_id, self.latitude_deg
            )));
        }
        if !(self.longitude_deg > -180.0 && self.longitude_deg <= 180.0) {
            return Err(Error::Config(format!(
                "site {}: longitude {} outside (-180, 180]",
                self.site_id, self.longitude_deg
            )));
        }
        if !self.altitude_km.is_finite() {
            return Err(Error::Config(format!(
                "site {}: non-finite altitude",
                self.site_id
            )));
        }
        Ok(())
    }
}

pub fn orbital_period(altitude_km: f64) -> Result<f64> {
    check_altitude(altitude_km)?;
    Ok(kepler_period(EARTH_RADIUS_KM + altitude_km))
}

fn kepler_period(semi_major_km: f64) -> f64 {
    2.0 * PI * (semi_major_km.powi(3) / MU_EARTH).sqrt()
}

/// Satellite positions at one instant, indexed by flat id.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationState {
    pub t: f64,
    pub positions: Vec<EcefPoint>,
}

impl ConstellationState {
    pub fn position(&self, flat_id: u32) -> EcefPoint {
        self.positions[flat_id as usize]
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// In-plane argument of latitude (radians) of a satellite at time `t`.
pub fn argument_of_latitude(spec: &ShellSpec, sat: SatelliteId, t: f64) -> f64 {
    let per_plane = f64::from(spec.sats_per_plane);
    let total = f64::from(spec.satellite_count());
    let mean_motion = 2.0 * PI / kepler_period(spec.orbit_radius_km());
    let slot = f64::from(sat.slot_index) * 2.0 * PI / per_plane;
    let phasing =
        f64::from(sat.plane_index) * f64::from(spec.phase_offset) * 2.0 * PI / total;
    slot + phasing + mean_motion * (t + spec.epoch_offset_s)
}

pub fn plane_raan(spec: &ShellSpec, plane_index: u32) -> f64 {
    (f64::from(plane_index) * spec.raan_spread_deg / f64::from(spec.planes)).to_radians()
}

/// Positions in the inertial frame whose x axis points at longitude 0 at epoch.
pub fn propagate_inertial(spec: &ShellSpec, t: f64) -> ConstellationState {
    let r = spec.orbit_radius_km();
    let (sin_i, cos_i) = spec.inclination_deg.to_radians().sin_cos();
    let mut positions = Vec::with_capacity(spec.satellite_count() as usize);
    for plane in 0..spec.planes {
        let (sin_o, cos_o) = plane_raan(spec, plane).sin_cos();
        for slot in 0..spec.sats_per_plane {
            let u = argument_of_latitude(spec, spec.satellite_at(plane, slot), t);
            let (sin_u, cos_u) = u.sin_cos();
            positions.push(EcefPoint::new(
                r * (cos_o * cos_u - sin_o * sin_u * cos_i),
                r * (sin_o * cos_u + cos_o * sin_u * cos_i),
                r * sin_u * sin_i,
            ));
        }
    }
    ConstellationState { t, positions }
}

/// Earth-fixed satellite positions at `t` seconds.
pub fn propagate(spec: &ShellSpec, t: f64) -> ConstellationState {
    let mut state = propagate_inertial(spec, t);
    let theta = EARTH_ROTATION_RAD_S * (t + spec.epoch_offset_s);
    let (sin_t, cos_t) = theta.sin_cos();
    for p in &mut state.positions {
        let (x, y) = (p.x, p.y);
        p.x = cos_t * x + sin_t * y;
        p.y = -sin_t * x + cos_t * y;
    }
    state
}

pub fn geodetic_to_ecef(site: &GroundSite) -> EcefPoint {
    let r = EARTH_RADIUS_KM + site.altitude_km;
    let (sin_lat, cos_lat) = site.latitude_deg.to_radians().sin_cos();
    let (sin_lon, cos_lon) = site.longitude_deg.to_radians().sin_cos();
    EcefPoint::new(r * cos_lat * cos_lon, r * cos_lat * sin_lon, r * sin_lat)
}
