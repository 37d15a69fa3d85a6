//! Scenario files: the map, tracks, crossings, lights, pedestrians and
//! vehicles of one simulated world.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::world::LightSchedule;
use super::SimError;
use crate::control::{ManagerConfig, WaypointPath};
use crate::dynamics::KinematicParams;
use crate::safety::{FilterConfig, ShieldKind};

pub const SCENARIO_VERSION: u32 = 1;

/// Largest distance a light stop-line may sit from its track.
const STOP_LINE_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapExtent {
    pub width: f64,
    pub height: f64,
}

impl Default for MapExtent {
    fn default() -> Self {
        Self { width: 70.0, height: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackGeometry {
    Polyline {
        points: Vec<[f64; 2]>,
    },
    /// Anticlockwise loop around a rectangle with circular corners, starting
    /// where the bottom-left corner arc meets the bottom edge.
    RoundedRect {
        min: [f64; 2],
        max: [f64; 2],
        radius: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
}

fn default_spacing() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub name: String,
    pub geometry: TrackGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingSpec {
    pub id: u32,
    pub a: [f64; 2],
    pub b: [f64; 2],
    #[serde(default = "default_trigger")]
    pub trigger_radius: f64,
}

fn default_trigger() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub id: u32,
    pub track: String,
    /// Travel direction on `track` the light governs.
    #[serde(default)]
    pub direction: Direction,
    pub stop_line: [f64; 2],
    /// Where the light head stands; defaults to the stop-line point.
    #[serde(default)]
    pub position: Option<[f64; 2]>,
    #[serde(default)]
    pub schedule: LightSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub id: u32,
    /// Must be near one end of the crossing; the walker starts there.
    pub home: [f64; 2],
    pub crossing: u32,
    #[serde(default = "default_walk_speed")]
    pub walk_speed: f64,
    /// Defaults to the crossing's trigger radius.
    #[serde(default)]
    pub trigger_radius: Option<f64>,
    /// A triggered pedestrian only steps out while no vehicle is this close
    /// to the crossing.
    #[serde(default = "default_yield_radius")]
    pub yield_radius: f64,
}

fn default_walk_speed() -> f64 {
    1.2
}

fn default_yield_radius() -> f64 {
    8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kinematic,
    Twin,
    /// Driven by an external process over the TCP bridge.
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: u32,
    pub model: ModelKind,
    pub track: String,
    #[serde(default)]
    pub direction: Direction,
    /// Start position as arc length along the driving direction.
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub controller: ManagerConfig,
    #[serde(default)]
    pub dynamics: KinematicParams,
    #[serde(default = "default_shield")]
    pub shield: ShieldKind,
    /// Twin weights file, relative to the scenario file.
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

fn default_shield() -> ShieldKind {
    ShieldKind::Gr1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub delta_nom: f64,
    pub jitter: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self { delta_nom: 0.02, jitter: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub map: MapExtent,
    /// Multiplies every length in the file, including the filter bands.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "default_horizon")]
    pub hazard_horizon: f64,
    #[serde(default)]
    pub yellow_is_red: bool,
    /// Crossing a stop-line within this many seconds of the light turning
    /// red is not counted as a violation.
    #[serde(default = "default_red_grace")]
    pub red_grace: f64,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub tracks: Vec<TrackSpec>,
    #[serde(default)]
    pub crossings: Vec<CrossingSpec>,
    #[serde(default)]
    pub lights: Vec<LightSpec>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

fn default_scale() -> f64 {
    1.0
}

fn default_horizon() -> f64 {
    30.0
}

fn default_red_grace() -> f64 {
    1.0
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    let mut sc = Scenario::from_json(&text)?;
    sc.base_dir = path.parent().map(Path::to_path_buf);
    Ok(sc)
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> SimError {
    SimError::Invalid { field: field.into(), msg: msg.into() }
}

fn dangling(field: impl Into<String>, msg: impl Into<String>) -> SimError {
    SimError::Reference { field: field.into(), msg: msg.into() }
}

fn finite_point(p: [f64; 2]) -> bool {
    p[0].is_finite() && p[1].is_finite()
}

impl Scenario {
    /// Parses and validates. Schema errors carry the JSON path of the
    /// offending field.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| SimError::Schema { path: e.path().to_string(), msg: e.inner().to_string() })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        crate::jsonfmt::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn track(&self, name: &str) -> Option<&TrackSpec> {
        self.tracks.iter().find(|t| t.name == name)
    }

    pub fn crossing(&self, id: u32) -> Option<&CrossingSpec> {
        self.crossings.iter().find(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.version != SCENARIO_VERSION {
            return Err(invalid("version", format!("unsupported version {}", self.version)));
        }
        if !(self.map.width > 0.0 && self.map.height > 0.0) {
            return Err(invalid("map", "extent must be positive"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid("scale", format!("{} is not a positive factor", self.scale)));
        }
        self.filter.validate().map_err(|e| invalid("filter", e.to_string()))?;
        if !(self.hazard_horizon > 0.0) {
            return Err(invalid("hazard_horizon", "must be positive"));
        }
        if !(self.red_grace >= 0.0) {
            return Err(invalid("red_grace", "must be non-negative"));
        }
        if !(self.sampling.delta_nom > 0.0 && (0.0..1.0).contains(&self.sampling.jitter)) {
            return Err(invalid("sampling", "delta_nom must be positive and jitter in [0, 1)"));
        }

        let mut paths = BTreeMap::new();
        for (i, t) in self.tracks.iter().enumerate() {
            let field = format!("tracks[{i}]");
            if paths.contains_key(t.name.as_str()) {
                return Err(invalid(field, format!("duplicate track name '{}'", t.name)));
            }
            paths.insert(t.name.as_str(), t.geometry.build(1.0).map_err(|m| invalid(format!("{field}.geometry"), m))?);
        }
        unique_ids(self.crossings.iter().map(|c| c.id), "crossings")?;
        for (i, c) in self.crossings.iter().enumerate() {
            if !(finite_point(c.a) && finite_point(c.b)) || c.a == c.b {
                return Err(invalid(format!("crossings[{i}]"), "segment needs two distinct finite endpoints"));
            }
            if !(c.trigger_radius > 0.0) {
                return Err(invalid(format!("crossings[{i}].trigger_radius"), "must be positive"));
            }
        }
        unique_ids(self.lights.iter().map(|l| l.id), "lights")?;
        for (i, l) in self.lights.iter().enumerate() {
            let field = format!("lights[{i}]");
            let path = paths
                .get(l.track.as_str())
                .ok_or_else(|| dangling(format!("{field}.track"), format!("no track named '{}'", l.track)))?;
            l.schedule.validate().map_err(|m| invalid(format!("{field}.schedule"), m))?;
            let off = path.project(l.stop_line).dist;
            if !(off <= STOP_LINE_TOLERANCE) {
                return Err(invalid(
                    format!("{field}.stop_line"),
                    format!("{off:.2} m from track '{}' (limit {STOP_LINE_TOLERANCE} m)", l.track),
                ));
            }
        }
        unique_ids(self.pedestrians.iter().map(|p| p.id), "pedestrians")?;
        for (i, p) in self.pedestrians.iter().enumerate() {
            let field = format!("pedestrians[{i}]");
            let c = self.crossing(p.crossing).ok_or_else(|| {
                dangling(
                    format!("{field}.crossing"),
                    format!("crossing {} does not exist ({} defined)", p.crossing, self.crossings.len()),
                )
            })?;
            if !(p.walk_speed > 0.0 && p.walk_speed.is_finite()) {
                return Err(invalid(format!("{field}.walk_speed"), "must be positive"));
            }
            if p.trigger_radius.is_some_and(|r| !(r > 0.0)) || !(p.yield_radius >= 0.0) {
                return Err(invalid(field, "radii must be positive"));
            }
            let end = dist(p.home, c.a).min(dist(p.home, c.b));
            if !(end <= 2.0) {
                return Err(invalid(
                    format!("{field}.home"),
                    format!("{end:.2} m from the nearest end of crossing {}", c.id),
                ));
            }
        }
        unique_ids(self.vehicles.iter().map(|v| v.id), "vehicles")?;
        for (i, v) in self.vehicles.iter().enumerate() {
            let field = format!("vehicles[{i}]");
            if !paths.contains_key(v.track.as_str()) {
                return Err(dangling(format!("{field}.track"), format!("no track named '{}'", v.track)));
            }
            if !v.start_s.is_finite() {
                return Err(invalid(format!("{field}.start_s"), "must be finite"));
            }
            v.controller.validate().map_err(|e| invalid(format!("{field}.controller"), e.to_string()))?;
            v.dynamics.validate().map_err(|e| invalid(format!("{field}.dynamics"), e.to_string()))?;
            if v.controller.pp.delta_max > v.dynamics.delta_max {
                return Err(invalid(format!("{field}.controller.pp.delta_max"), "exceeds the vehicle steering limit"));
            }
            if v.weights.is_some() && v.model != ModelKind::Twin {
                return Err(invalid(format!("{field}.weights"), "only twin vehicles take weights"));
            }
        }
        Ok(())
    }

    /// Resolves a file reference relative to the scenario directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// True when some vehicle is driven over the bridge.
    pub fn needs_bridge(&self) -> bool {
        self.vehicles.iter().any(|v| v.model == ModelKind::Bridge)
    }
}

fn unique_ids(ids: impl Iterator<Item = u32>, what: &str) -> Result<(), SimError> {
    let mut seen = BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(invalid(format!("{what}[{i}].id"), format!("duplicate id {id}")));
        }
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl TrackGeometry {
    /// Samples the track into a closed waypoint loop with every length
    /// multiplied by `scale`.
    pub fn build(&self, scale: f64) -> Result<WaypointPath, String> {
        let points = match self {
            TrackGeometry::Polyline { points } => {
                if !points.iter().all(|p| finite_point(*p)) {
                    return Err("points must be finite".into());
                }
                points.clone()
            }
            TrackGeometry::RoundedRect { min, max, radius, spacing } => rounded_rect(*min, *max, *radius, *spacing)?,
        };
        let points = points.into_iter().map(|p| [p[0] * scale, p[1] * scale]).collect();
        WaypointPath::new(points, true).map_err(|e| e.to_string())
    }
}

fn rounded_rect(min: [f64; 2], max: [f64; 2], r: f64, spacing: f64) -> Result<Vec<[f64; 2]>, String> {
    let (w, h) = (max[0] - min[0], max[1] - min[1]);
    if !(r > 0.0 && 2.0 * r <= w && 2.0 * r <= h) {
        return Err(format!("radius {r} does not fit a {w} x {h} rectangle"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err("spacing must be positive".into());
    }
    let mut out = Vec::new();
    let line = |out: &mut Vec<[f64; 2]>, a: [f64; 2], b: [f64; 2]| {
        let len = dist(a, b);
        let n = (len / spacing).ceil() as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        }
    };
    let arc = |out: &mut Vec<[f64; 2]>, c: [f64; 2], from: f64| {
        let n = (FRAC_PI_2 * r / spacing).ceil() as usize;
        for k in 0..n {
            let a = from + FRAC_PI_2 * k as f64 / n as f64;
            out.push([c[0] + r * a.cos(), c[1] + r * a.sin()]);
        }
    };
    let (x0, y0, x1, y1) = (min[0], min[1], max[0], max[1]);
    line(&mut out, [x0 + r, y0], [x1 - r, y0]);
    arc(&mut out, [x1 - r, y0 + r], -FRAC_PI_2);
    line(&mut out, [x1, y0 + r], [x1, y1 - r]);
    arc(&mut out, [x1 - r, y1 - r], 0.0);
    line(&mut out, [x1 - r, y1], [x0 + r, y1]);
    arc(&mut out, [x0 + r, y1 - r], FRAC_PI_2);
    line(&mut out, [x0, y1 - r], [x0, y0 + r]);
    arc(&mut out, [x0 + r, y0 + r], PI);
    Ok(out)
}

/// The driving path of a vehicle: the track loop, walked backwards for
/// reverse vehicles. Both start at the same point, so a native arc length
/// `s` maps to `length - s` on the reversed loop.
pub fn driving_path(track: &WaypointPath, dir: Direction) -> WaypointPath {
    match dir {
        Direction::Forward => track.clone(),
        Direction::Reverse => {
            let pts = track.points();
            let mut rev = vec![pts[0]];
            rev.extend(pts[1..].iter().rev());
            WaypointPath::new(rev, true).expect("reversal keeps a valid loop")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"tracks": [{"name": "loop", "geometry": {"shape": "rounded_rect", "min": [0, 0], "max": [20, 10], "radius": 2}}]}"#
    }

    #[test]
    fn map_and_one_track_loads_with_defaults() {
        let sc = Scenario::from_json(minimal()).unwrap();
        assert_eq!(sc.map, MapExtent { width: 70.0, height: 30.0 });
        assert!(sc.lights.is_empty() && sc.pedestrians.is_empty() && sc.vehicles.is_empty());
        assert_eq!(sc.filter, FilterConfig::default());
        assert_eq!(sc.scale, 1.0);
    }

    #[test]
    fn rounded_rect_length_matches_closed_form() {
        let path = TrackGeometry::RoundedRect { min: [0.0, 0.0], max: [20.0, 10.0], radius: 2.0, spacing: 0.05 }
            .build(1.0)
            .unwrap();
        // straights plus one full circle; chords shorten the arcs slightly
        let exact = 2.0 * (16.0 + 6.0) + 2.0 * PI * 2.0;
        assert!((path.length() - exact).abs() < 1e-3, "{}", path.length());
        assert_eq!(path.points()[0], [2.0, 0.0]);
        assert!(path.heading_at(0.0).abs() < 1e-12);
    }

    #[test]
    fn scale_multiplies_geometry() {
        let g = TrackGeometry::Polyline { points: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]] };
        assert!((g.build(0.1).unwrap().length() - (2.0 + 200f64.sqrt() * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn schema_errors_carry_field_path() {
        let bad = r#"{"tracks": [{"name": "t", "geometry": {"shape": "rounded_rect", "min": [0, 0], "max": "x", "radius": 1}}]}"#;
        match Scenario::from_json(bad) {
            Err(SimError::Schema { path, .. }) => assert!(path.starts_with("tracks[0].geometry"), "{path}"),
            other => panic!("{other:?}"),
        }
        match Scenario::from_json(r#"{"vehicles": [{"id": 1, "model": "hover", "track": "t"}]}"#) {
            Err(SimError::Schema { path, .. }) => assert_eq!(path, "vehicles[0].model"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Scenario::from_json(r#"{"colour": 1}"#), Err(SimError::Schema { .. })));
    }

    #[test]
    fn dangling_references() {
        let mut v: serde_json::Value = serde_json::from_str(minimal()).unwrap();
        v["crossings"] = serde_json::json!([{"id": 1, "a": [5, -2], "b": [5, 2]}]);
        v["pedestrians"] = serde_json::json!([{"id": 1, "home": [5, -2], "crossing": 9}]);
        match Scenario::from_json(&v.to_string()) {
            Err(SimError::Reference { field, .. }) => assert_eq!(field, "pedestrians[0].crossing"),
            other => panic!("{other:?}"),
        }
        v["pedestrians"] = serde_json::json!([]);
        v["vehicles"] = serde_json::json!([{"id": 1, "model": "kinematic", "track": "nowhere"}]);
        assert!(matches!(Scenario::from_json(&v.to_string()), Err(SimError::Reference { .. })));
    }

    #[test]
    fn stop_line_must_lie_on_track() {
        let mut v: serde_json::Value = serde_json::from_str(minimal()).unwrap();
        v["lights"] = serde_json::json!([{"id": 1, "track": "loop", "stop_line": [10, 0.2]}]);
        Scenario::from_json(&v.to_string()).unwrap();
        v["lights"] = serde_json::json!([{"id": 1, "track": "loop", "stop_line": [10, 3]}]);
        match Scenario::from_json(&v.to_string()) {
            Err(SimError::Invalid { field, .. }) => assert_eq!(field, "lights[0].stop_line"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reversed_path_maps_arc_length() {
        let track = TrackGeometry::Polyline { points: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 3.0]] }
            .build(1.0)
            .unwrap();
        let rev = driving_path(&track, Direction::Reverse);
        assert_eq!(rev.length(), track.length());
        for s in [0.5, 3.0, 5.5, 9.0, 13.9] {
            let a = track.point_at(s);
            let b = rev.point_at(track.length() - s);
            assert!(dist(a, b) < 1e-12, "{s}");
        }
    }
}
