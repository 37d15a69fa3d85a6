use serde::{Deserialize, Serialize};

use crate::bus::LightColor;
use crate::control::WaypointPath;

/// Fixed-cycle light timing. Phases run red → yellow → green and repeat;
/// `initial` picks the phase in force at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightSchedule {
    pub initial: LightColor,
    pub red: f64,
    pub yellow: f64,
    pub green: f64,
}

impl Default for LightSchedule {
    fn default() -> Self {
        Self { initial: LightColor::Red, red: 5.0, yellow: 2.0, green: 10.0 }
    }
}

const ORDER: [LightColor; 3] = [LightColor::Red, LightColor::Yellow, LightColor::Green];

impl LightSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if [self.red, self.yellow, self.green].iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err("dwell durations must be positive".into())
        }
    }

    fn dwell(&self, c: LightColor) -> f64 {
        match c {
            LightColor::Red => self.red,
            LightColor::Yellow => self.yellow,
            LightColor::Green => self.green,
        }
    }

    /// Color at `t` and the time already spent in that phase.
    pub fn phase(&self, t: f64) -> (LightColor, f64) {
        let cycle = self.red + self.yellow + self.green;
        let first = ORDER.iter().position(|c| *c == self.initial).unwrap();
        let mut tau = t.max(0.0).rem_euclid(cycle);
        for k in 0..3 {
            let c = ORDER[(first + k) % 3];
            let d = self.dwell(c);
            if tau < d {
                return (c, tau);
            }
            tau -= d;
        }
        // rounding at the very end of the cycle
        (self.initial, 0.0)
    }
}

pub fn light_color(schedule: &LightSchedule, t: f64) -> LightColor {
    schedule.phase(t).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PedPhase {
    Idle,
    /// Triggered, waiting for nearby vehicles to clear before stepping out.
    Waiting,
    Walking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u32,
    pub crossing: u32,
    /// Current side of the crossing and the side being walked to.
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub position: [f64; 2],
    pub phase: PedPhase,
    pub walk_speed: f64,
    pub trigger_radius: f64,
    pub yield_radius: f64,
    walked: f64,
    /// Which vehicles were inside the trigger radius last step.
    inside: Vec<bool>,
}

impl Pedestrian {
    /// Starts idle at the end of `a`–`b` nearest to `home`.
    pub fn new(id: u32, crossing: u32, a: [f64; 2], b: [f64; 2], home: [f64; 2]) -> Self {
        let (from, to) = if dist(home, a) <= dist(home, b) { (a, b) } else { (b, a) };
        Self {
            id,
            crossing,
            from,
            to,
            position: from,
            phase: PedPhase::Idle,
            walk_speed: 1.2,
            trigger_radius: 20.0,
            yield_radius: 8.0,
            walked: 0.0,
            inside: Vec::new(),
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        if self.phase != PedPhase::Walking {
            return [0.0, 0.0];
        }
        let len = dist(self.from, self.to);
        let k = self.walk_speed / len;
        [(self.to[0] - self.from[0]) * k, (self.to[1] - self.from[1]) * k]
    }

    pub fn is_walking(&self) -> bool {
        self.phase == PedPhase::Walking
    }
}

/// Advances one pedestrian by `dt` given the current vehicle positions.
///
/// An idle pedestrian is triggered when a vehicle enters the trigger radius
/// of the crossing. Entering means being inside now but not at the previous
/// step, so a vehicle that stopped for the pedestrian does not send them back
/// and forth forever. Once triggered the pedestrian waits for every vehicle
/// to be outside the yield radius, then walks to the far side and goes idle
/// there.
pub fn pedestrian_step(ped: &mut Pedestrian, vehicles: &[[f64; 2]], dt: f64) {
    let near = |r: f64| vehicles.iter().map(|p| point_segment_distance(*p, ped.from, ped.to)).map(move |d| d <= r);
    let inside: Vec<bool> = near(ped.trigger_radius).collect();
    let entered = inside.iter().enumerate().any(|(i, now)| *now && !ped.inside.get(i).copied().unwrap_or(false));
    ped.inside = inside;

    if ped.phase == PedPhase::Idle && entered {
        ped.phase = PedPhase::Waiting;
    }
    if ped.phase == PedPhase::Waiting && !near(ped.yield_radius).any(|b| b) {
        ped.phase = PedPhase::Walking;
        ped.walked = 0.0;
    }
    if ped.phase == PedPhase::Walking {
        let len = dist(ped.from, ped.to);
        ped.walked += ped.walk_speed * dt;
        if ped.walked >= len {
            ped.position = ped.to;
            std::mem::swap(&mut ped.from, &mut ped.to);
            ped.phase = PedPhase::Idle;
            ped.walked = 0.0;
        } else {
            let f = ped.walked / len;
            ped.position = [ped.from[0] + f * (ped.to[0] - ped.from[0]), ped.from[1] + f * (ped.to[1] - ped.from[1])];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    RedLight,
    Pedestrian,
}

/// A place on a vehicle's path where it may have to stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPoint {
    pub kind: HazardKind,
    /// Light id, or crossing id for pedestrians.
    pub source: u32,
    /// Arc length on the vehicle's driving path.
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardQuery {
    pub kind: HazardKind,
    pub source: u32,
    /// Along-path distance from the vehicle to the stop point.
    pub d: f64,
}

/// Nearest active stop point ahead of arc length `s` within `horizon`.
/// Offsets are measured forwards along the path, so nothing behind the
/// vehicle is ever returned.
pub fn hazard_query<'a>(
    path: &WaypointPath,
    s: f64,
    active: impl IntoIterator<Item = &'a StopPoint>,
    horizon: f64,
) -> Option<HazardQuery> {
    active
        .into_iter()
        .map(|p| HazardQuery { kind: p.kind, source: p.source, d: path.forward_offset(s, p.s) })
        .filter(|h| h.d >= 0.0 && h.d <= horizon)
        .min_by(|a, b| a.d.total_cmp(&b.d))
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    if l2 == 0.0 {
        return dist(p, a);
    }
    let f = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0);
    dist(p, [a[0] + f * d[0], a[1] + f * d[1]])
}

/// Arc lengths at which segment `a`–`b` crosses a path, ascending.
pub fn segment_crossings(path: &WaypointPath, a: [f64; 2], b: [f64; 2]) -> Vec<f64> {
    let pts = path.points();
    let n = path.segment_count();
    let mut out = Vec::new();
    let mut s0 = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % pts.len()];
        let seg_len = dist(p, q);
        let r = [q[0] - p[0], q[1] - p[1]];
        let e = [b[0] - a[0], b[1] - a[1]];
        let den = r[0] * e[1] - r[1] * e[0];
        if den != 0.0 {
            let w = [a[0] - p[0], a[1] - p[1]];
            let t = (w[0] * e[1] - w[1] * e[0]) / den;
            let u = (w[0] * r[1] - w[1] * r[0]) / den;
            if (0.0..1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                out.push(s0 + t * seg_len);
            }
        }
        s0 += seg_len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_examples() {
        let s = LightSchedule::default();
        assert_eq!(light_color(&s, 3.0), LightColor::Red);
        assert_eq!(light_color(&s, 6.0), LightColor::Yellow);
        assert_eq!(light_color(&s, 10.0), LightColor::Green);
        assert_eq!(light_color(&s, 17.0), LightColor::Red);
        assert_eq!(s.phase(18.5), (LightColor::Red, 1.5));
    }

    #[test]
    fn schedule_starting_green() {
        let s = LightSchedule { initial: LightColor::Green, ..Default::default() };
        assert_eq!(light_color(&s, 0.0), LightColor::Green);
        assert_eq!(light_color(&s, 10.0), LightColor::Red);
        assert_eq!(light_color(&s, 15.5), LightColor::Yellow);
        assert!(LightSchedule { yellow: 0.0, ..s }.validate().is_err());
    }

    fn ped() -> Pedestrian {
        Pedestrian::new(1, 1, [0.0, 0.0], [0.0, 6.0], [0.0, -0.5])
    }

    #[test]
    fn idle_without_vehicles_nearby() {
        let mut p = ped();
        for _ in 0..100 {
            pedestrian_step(&mut p, &[[50.0, 3.0]], 0.02);
        }
        assert_eq!(p.position, [0.0, 0.0]);
        assert_eq!(p.phase, PedPhase::Idle);
    }

    #[test]
    fn entering_vehicle_starts_the_walk() {
        let mut p = ped();
        pedestrian_step(&mut p, &[[25.0, 3.0]], 0.02);
        pedestrian_step(&mut p, &[[15.0, 3.0]], 0.05);
        assert_eq!(p.phase, PedPhase::Walking);
        assert!((p.position[1] - 1.2 * 0.05).abs() < 1e-15);
        assert_eq!(p.velocity(), [0.0, 1.2]);
    }

    #[test]
    fn traversal_time_is_length_over_speed() {
        let mut p = ped();
        let dt = 0.01;
        let mut t = 0.0;
        let mut started = None;
        while p.from == [0.0, 0.0] {
            pedestrian_step(&mut p, &[[15.0, 3.0]], dt);
            if started.is_none() && p.is_walking() {
                started = Some(t);
            }
            t += dt;
        }
        let walked = t - started.unwrap();
        // discretized to whole steps: within one step of length / speed
        assert!((walked - 6.0 / 1.2).abs() <= dt + 1e-9, "{walked}");
        assert_eq!(p.position, [0.0, 6.0]);
        assert_eq!(p.phase, PedPhase::Idle);
    }

    #[test]
    fn waits_for_close_vehicles_and_does_not_retrigger() {
        let mut p = ped();
        pedestrian_step(&mut p, &[[5.0, 3.0]], 0.02);
        assert_eq!(p.phase, PedPhase::Waiting);
        pedestrian_step(&mut p, &[[-9.0, 3.0]], 0.02);
        assert_eq!(p.phase, PedPhase::Walking);
        while p.is_walking() {
            pedestrian_step(&mut p, &[[-9.0, 3.0]], 0.02);
        }
        // still inside the radius: no new trigger
        for _ in 0..50 {
            pedestrian_step(&mut p, &[[-9.0, 3.0]], 0.02);
        }
        assert_eq!(p.phase, PedPhase::Idle);
        assert_eq!(p.position, [0.0, 6.0]);
    }

    fn line() -> WaypointPath {
        WaypointPath::new(vec![[0.0, 0.0], [100.0, 0.0], [100.0, 10.0], [0.0, 10.0]], true).unwrap()
    }

    #[test]
    fn hazard_examples() {
        let path = line();
        let light = StopPoint { kind: HazardKind::RedLight, source: 1, s: 22.0 };
        let ped = StopPoint { kind: HazardKind::Pedestrian, source: 3, s: 18.0 };
        let h = hazard_query(&path, 10.0, [&light], 30.0).unwrap();
        assert_eq!((h.kind, h.d), (HazardKind::RedLight, 12.0));
        // green light: not active
        assert_eq!(hazard_query(&path, 10.0, [], 30.0), None);
        let h = hazard_query(&path, 10.0, [&light, &ped], 30.0).unwrap();
        assert_eq!((h.kind, h.source, h.d), (HazardKind::Pedestrian, 3, 8.0));
        // beyond the horizon
        assert_eq!(hazard_query(&path, 10.0, [&StopPoint { s: 41.0, ..light }], 30.0), None);
    }

    #[test]
    fn hazard_behind_is_ignored() {
        let path = line();
        let light = StopPoint { kind: HazardKind::RedLight, source: 1, s: 22.0 };
        assert_eq!(hazard_query(&path, 22.5, [&light], 30.0), None);
        assert_eq!(hazard_query(&path, 22.0, [&light], 30.0).unwrap().d, 0.0);
        // wraps around the loop end
        let h = hazard_query(&path, 215.0, [&StopPoint { s: 5.0, ..light }], 30.0).unwrap();
        assert!((h.d - 10.0).abs() < 1e-12);
    }

    #[test]
    fn crossings_of_a_loop() {
        let s = segment_crossings(&line(), [30.0, -5.0], [30.0, 15.0]);
        assert_eq!(s, vec![30.0, 180.0]);
        assert!(segment_crossings(&line(), [30.0, 1.0], [30.0, 9.0]).is_empty());
        assert!((point_segment_distance([3.0, 4.0], [0.0, 0.0], [0.0, 1.0]) - 18f64.sqrt()).abs() < 1e-12);
    }
}
