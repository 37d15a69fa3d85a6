//! Controller manager: lookahead selection on a waypoint path, pure pursuit
//! steering and constant-time-gap cruise control.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::SensorObject;
use crate::dynamics::VehicleState;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("path needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("path points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("pose is {dist:.2} m from the path (limit {limit:.2} m)")]
    OffPath { dist: f64, limit: f64 },
    #[error("target coincides with the vehicle position")]
    ZeroDistance,
    #[error("invalid controller configuration: {0}")]
    Config(String),
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    points: Vec<[f64; 2]>,
    cyclic: bool,
    /// Arc length at each point; for cyclic paths one extra entry closes the loop.
    cum: Vec<f64>,
}

/// Closest point of a path to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub dist: f64,
    pub point: [f64; 2],
    pub segment: usize,
}

impl WaypointPath {
    pub fn new(mut points: Vec<[f64; 2]>, cyclic: bool) -> Result<Self, ControlError> {
        if cyclic && points.len() > 2 && points.first() == points.last() {
            points.pop();
        }
        if points.len() < 2 {
            return Err(ControlError::TooFewPoints(points.len()));
        }
        for i in 1..points.len() {
            if points[i] == points[i - 1] {
                return Err(ControlError::DuplicatePoint(i - 1, i));
            }
        }
        let mut cum = vec![0.0];
        let n_seg = if cyclic { points.len() } else { points.len() - 1 };
        for i in 0..n_seg {
            let a = points[i];
            let b = points[(i + 1) % points.len()];
            cum.push(cum[i] + dist(a, b));
        }
        Ok(Self { points, cyclic, cum })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.cum.len() - 1
    }

    fn segment(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.points[i], self.points[(i + 1) % self.points.len()])
    }

    /// Wraps `s` into `[0, length)` on cyclic paths and clamps otherwise.
    pub fn wrap(&self, s: f64) -> f64 {
        let len = self.length();
        if self.cyclic {
            s.rem_euclid(len)
        } else {
            s.clamp(0.0, len)
        }
    }

    /// Forward arc distance from `from` to `to`, wrapping on cyclic paths.
    pub fn forward_offset(&self, from: f64, to: f64) -> f64 {
        if self.cyclic {
            (to - from).rem_euclid(self.length())
        } else {
            to - from
        }
    }

    fn segment_at(&self, s: f64) -> usize {
        let idx = self.cum.partition_point(|c| *c <= s);
        idx.saturating_sub(1).min(self.segment_count() - 1)
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = self.wrap(s);
        let i = self.segment_at(s);
        let (a, b) = self.segment(i);
        let l = self.cum[i + 1] - self.cum[i];
        let f = ((s - self.cum[i]) / l).clamp(0.0, 1.0);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    /// Tangent direction at `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let (a, b) = self.segment(self.segment_at(self.wrap(s)));
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    fn project_segment(&self, i: usize, p: [f64; 2]) -> Projection {
        let (a, b) = self.segment(i);
        let d = [b[0] - a[0], b[1] - a[1]];
        let l2 = d[0] * d[0] + d[1] * d[1];
        let f = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0);
        let q = [a[0] + f * d[0], a[1] + f * d[1]];
        Projection { s: self.cum[i] + f * (self.cum[i + 1] - self.cum[i]), dist: dist(p, q), point: q, segment: i }
    }

    /// Globally closest point; ties go to the lowest arc length.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        (0..self.segment_count())
            .map(|i| self.project_segment(i, p))
            .reduce(|best, c| if c.dist < best.dist { c } else { best })
            .unwrap()
    }

    /// Closest point among segments overlapping the arc interval
    /// `[s0, s0 + span]` (wrapped on cyclic paths).
    pub fn project_window(&self, p: [f64; 2], s0: f64, span: f64) -> Projection {
        if span >= self.length() {
            return self.project(p);
        }
        let n = self.segment_count();
        let start = self.segment_at(self.wrap(s0));
        let mut best: Option<Projection> = None;
        let mut covered = 0.0;
        for k in 0..n {
            let i = if self.cyclic { (start + k) % n } else { start + k };
            if i >= n {
                break;
            }
            let c = self.project_segment(i, p);
            if best.is_none_or(|b| c.dist < b.dist) {
                best = Some(c);
            }
            covered += self.cum[i + 1] - self.cum[i];
            if covered >= span + (self.wrap(s0) - self.cum[start]) {
                break;
            }
        }
        best.unwrap()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookahead {
    pub point: [f64; 2],
    /// Arc length of the pose projection, wrapped into the path.
    pub s: f64,
    /// Unwrapped arc length travelled since the tracker started.
    pub progress: f64,
    pub lateral: f64,
}

/// Stateless lookahead: global projection, then `l_d` further along the path.
pub fn lookahead_point(path: &WaypointPath, pose: [f64; 2], l_d: f64) -> Result<Lookahead, ControlError> {
    let proj = path.project(pose);
    check_on_path(proj.dist, l_d)?;
    Ok(Lookahead { point: path.point_at(proj.s + l_d), s: proj.s, progress: proj.s, lateral: proj.dist })
}

fn check_on_path(d: f64, l_d: f64) -> Result<(), ControlError> {
    if d > 5.0 * l_d {
        Err(ControlError::OffPath { dist: d, limit: 5.0 * l_d })
    } else {
        Ok(())
    }
}

/// Per-vehicle odometry memory: keeps the projection local to the last one
/// so progress never jumps backwards or across self-intersections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathTracker {
    s: Option<f64>,
    progress: f64,
}

impl PathTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    /// Arc length of the last accepted projection.
    pub fn s(&self) -> Option<f64> {
        self.s
    }

    /// Completed laps on a cyclic path.
    pub fn laps(&self, path: &WaypointPath) -> u64 {
        (self.progress / path.length()).floor().max(0.0) as u64
    }

    pub fn lookahead(&mut self, path: &WaypointPath, pose: [f64; 2], l_d: f64) -> Result<Lookahead, ControlError> {
        let proj = match self.s {
            None => path.project(pose),
            Some(s) => {
                // search slightly behind the last projection so small overshoots
                // do not snap forward
                let back = l_d.min(path.length() / 4.0);
                path.project_window(pose, s - back, back + 3.0 * l_d + 2.0)
            }
        };
        check_on_path(proj.dist, l_d)?;
        match self.s {
            None => self.progress = 0.0,
            Some(prev) => {
                let fwd = path.forward_offset(prev, proj.s);
                // anything beyond half a path length is a backward step
                if fwd > 0.0 && fwd < path.length() / 2.0 {
                    self.progress += fwd;
                    self.s = Some(proj.s);
                }
            }
        }
        if self.s.is_none() {
            self.s = Some(proj.s);
        }
        let s = self.s.unwrap();
        Ok(Lookahead { point: path.point_at(s + l_d), s, progress: self.progress, lateral: proj.dist })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpConfig {
    pub lookahead: f64,
    pub wheelbase: f64,
    pub delta_max: f64,
}

impl Default for PpConfig {
    fn default() -> Self {
        Self { lookahead: 2.0, wheelbase: 0.32, delta_max: 0.4189 }
    }
}

/// Pure pursuit steering towards `target`. The curvature uses the actual
/// distance to the target.
pub fn pure_pursuit(pose: &VehicleState, target: [f64; 2], cfg: &PpConfig) -> Result<f64, ControlError> {
    let dx = target[0] - pose.x;
    let dy = target[1] - pose.y;
    let d = dx.hypot(dy);
    if d == 0.0 {
        return Err(ControlError::ZeroDistance);
    }
    let alpha = dy.atan2(dx) - pose.theta;
    let kappa = 2.0 * alpha.sin() / d;
    Ok((cfg.wheelbase * kappa).atan().clamp(-cfg.delta_max, cfg.delta_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccConfig {
    pub d_min: f64,
    pub t_safe: f64,
    pub v_nom: f64,
}

impl Default for AccConfig {
    fn default() -> Self {
        Self { d_min: 5.0, t_safe: 1.5, v_nom: 3.0 }
    }
}

/// Constant-time-gap speed: the equilibrium of `d = d_min + v·t_safe`.
pub fn acc_speed(d_dist: Option<f64>, cfg: &AccConfig) -> f64 {
    match d_dist {
        None => cfg.v_nom,
        Some(d) => ((d - cfg.d_min) / cfg.t_safe).clamp(0.0, cfg.v_nom),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerConfig {
    pub pp: PpConfig,
    pub acc: AccConfig,
    /// Maximum lateral offset from the ego path for a leader.
    pub lateral_gap: f64,
    /// Forward arc length searched for leaders.
    pub sensor_range: f64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self { pp: PpConfig::default(), acc: AccConfig::default(), lateral_gap: 1.5, sensor_range: 30.0 }
    }
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let pos = [
            self.pp.lookahead,
            self.pp.wheelbase,
            self.pp.delta_max,
            self.acc.d_min,
            self.acc.t_safe,
            self.acc.v_nom,
            self.lateral_gap,
            self.sensor_range,
        ];
        if pos.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(ControlError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManagerOutput {
    pub delta: f64,
    pub v_cmd: f64,
    /// Along-path distance to the detected leader, if any.
    pub leader: Option<f64>,
    pub progress: f64,
}

/// Along-path distance to the nearest object ahead in the ego lane.
pub fn leader_distance(path: &WaypointPath, ego_s: f64, objects: &[SensorObject], cfg: &ManagerConfig) -> Option<f64> {
    objects
        .iter()
        .filter_map(|o| {
            let proj = path.project_window([o.x, o.y], ego_s, cfg.sensor_range);
            if proj.dist >= cfg.lateral_gap {
                return None;
            }
            let off = path.forward_offset(ego_s, proj.s);
            (off > 0.0 && off <= cfg.sensor_range).then_some(off)
        })
        .min_by(f64::total_cmp)
}

/// One controller-manager update. `objects` must not contain the ego vehicle.
pub fn manager_step(
    pose: &VehicleState,
    objects: &[SensorObject],
    path: &WaypointPath,
    tracker: &mut PathTracker,
    cfg: &ManagerConfig,
) -> Result<ManagerOutput, ControlError> {
    let la = tracker.lookahead(path, [pose.x, pose.y], cfg.pp.lookahead)?;
    let delta = pure_pursuit(pose, la.point, &cfg.pp)?;
    let leader = leader_distance(path, la.s, objects, cfg);
    let v_cmd = acc_speed(leader, &cfg.acc);
    Ok(ManagerOutput { delta, v_cmd, leader, progress: la.progress })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line() -> WaypointPath {
        WaypointPath::new((0..=20).map(|i| [i as f64, 0.0]).collect(), false).unwrap()
    }

    fn square() -> WaypointPath {
        WaypointPath::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]], true).unwrap()
    }

    #[test]
    fn path_validation() {
        assert_eq!(WaypointPath::new(vec![[0.0, 0.0]], false), Err(ControlError::TooFewPoints(1)));
        assert_eq!(
            WaypointPath::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]], false),
            Err(ControlError::DuplicatePoint(1, 2))
        );
        assert_eq!(square().length(), 40.0);
        // closing duplicate is dropped on cyclic paths
        let closed =
            WaypointPath::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0], [0.0, 0.0]], true).unwrap();
        assert_eq!(closed, square());
    }

    #[test]
    fn straight_lookahead() {
        let la = lookahead_point(&line(), [0.0, 0.0], 1.0).unwrap();
        assert_eq!(la.point, [1.0, 0.0]);
    }

    #[test]
    fn square_lookahead_wraps_corner() {
        // 0.5 m before the (10, 0) corner, 2 m lookahead → 1.5 m up the next side
        let la = lookahead_point(&square(), [9.5, 0.1], 2.0).unwrap();
        assert!((la.point[0] - 10.0).abs() < 1e-12 && (la.point[1] - 1.5).abs() < 1e-12);
        // near the closing corner the point wraps past s = 0
        let la = lookahead_point(&square(), [0.0, 1.0], 2.0).unwrap();
        assert!((la.point[0] - 1.0).abs() < 1e-12 && la.point[1].abs() < 1e-12);
    }

    #[test]
    fn off_path_is_rejected() {
        let r = lookahead_point(&line(), [5.0, 20.0], 2.0);
        assert!(matches!(r, Err(ControlError::OffPath { .. })));
    }

    #[test]
    fn tracker_progress_is_monotone_over_laps() {
        let path = square();
        let mut tr = PathTracker::new();
        let mut last = 0.0;
        for k in 0..400 {
            let s = k as f64 * 0.25;
            let p = path.point_at(s);
            // jitter the pose backwards now and then
            let jitter = if k % 7 == 0 { -0.1 } else { 0.0 };
            let q = path.point_at(s + jitter);
            let la = tr.lookahead(&path, [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])], 2.0).unwrap();
            assert!(la.progress >= last);
            last = la.progress;
        }
        assert_eq!(tr.laps(&path), 2);
    }

    #[test]
    fn pure_pursuit_examples() {
        let cfg = PpConfig::default();
        let origin = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(pure_pursuit(&origin, [2.0, 0.0], &cfg).unwrap(), 0.0);
        let wide = PpConfig { delta_max: 1.0, ..cfg };
        let d = pure_pursuit(&origin, [0.0, 1.0], &wide).unwrap();
        assert!((d - 0.64f64.atan()).abs() < 1e-12);
        assert!((d - 0.5693).abs() < 5e-5);
        assert_eq!(pure_pursuit(&origin, [0.0, -1.0], &wide).unwrap(), -d);
        // default limit clamps the same target
        assert_eq!(pure_pursuit(&origin, [0.0, 1.0], &cfg).unwrap(), 0.4189);
        assert_eq!(pure_pursuit(&origin, [0.0, 0.0], &cfg), Err(ControlError::ZeroDistance));
    }

    #[test]
    fn acc_examples() {
        let cfg = AccConfig::default();
        assert_eq!(acc_speed(None, &cfg), 3.0);
        assert_eq!(acc_speed(Some(5.0), &cfg), 0.0);
        assert!((acc_speed(Some(6.5), &cfg) - 1.0).abs() < 1e-15);
        assert_eq!(acc_speed(Some(0.0), &cfg), 0.0);
        assert_eq!(acc_speed(Some(100.0), &cfg), 3.0);
    }

    fn obj(id: u32, x: f64, y: f64) -> SensorObject {
        SensorObject { id, x, y, theta: 0.0, v: 1.0 }
    }

    #[test]
    fn manager_free_road_and_leaders() {
        let cfg = ManagerConfig::default();
        let path = line();
        let ego = VehicleState::new(2.0, 0.0, 0.0, 2.0);
        let out = manager_step(&ego, &[], &path, &mut PathTracker::new(), &cfg).unwrap();
        assert_eq!((out.delta, out.v_cmd, out.leader), (0.0, 3.0, None));

        let out = manager_step(&ego, &[obj(2, 7.0, 0.2)], &path, &mut PathTracker::new(), &cfg).unwrap();
        assert_eq!((out.delta, out.v_cmd), (0.0, 0.0));
        assert!((out.leader.unwrap() - 5.0).abs() < 1e-12);

        // behind the ego, or in another lane
        let out =
            manager_step(&ego, &[obj(2, 0.5, 0.0), obj(3, 8.0, 3.0)], &path, &mut PathTracker::new(), &cfg).unwrap();
        assert_eq!((out.v_cmd, out.leader), (3.0, None));
    }

    proptest! {
        #[test]
        fn acc_is_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let cfg = AccConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(acc_speed(Some(lo), &cfg) <= acc_speed(Some(hi), &cfg));
        }

        #[test]
        fn pp_sign_law(x in -10.0f64..10.0, y in -10.0f64..10.0, th in -3.0f64..3.0) {
            prop_assume!(x.hypot(y) > 1e-3);
            let pose = VehicleState::new(0.0, 0.0, th, 1.0);
            let d = pure_pursuit(&pose, [x, y], &PpConfig::default()).unwrap();
            let alpha = y.atan2(x) - th;
            prop_assert_eq!(d.signum() * (d != 0.0) as i32 as f64, alpha.sin().signum() * (alpha.sin() != 0.0) as i32 as f64);
            prop_assert!(d.abs() <= 0.4189);
        }

        #[test]
        fn leader_does_not_change_steering(lx in 3.0f64..20.0) {
            let cfg = ManagerConfig::default();
            let ego = VehicleState::new(2.0, 0.3, 0.1, 2.0);
            let a = manager_step(&ego, &[], &line(), &mut PathTracker::new(), &cfg).unwrap();
            let b = manager_step(&ego, &[obj(5, lx, 0.0)], &line(), &mut PathTracker::new(), &cfg).unwrap();
            prop_assert_eq!(a.delta, b.delta);
        }
    }
}
