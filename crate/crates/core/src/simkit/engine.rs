use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::scenario::{driving_path, Direction, ModelKind, Scenario};
use super::world::{
    dist, hazard_query, pedestrian_step, segment_crossings, HazardKind, HazardQuery, LightSchedule, Pedestrian,
    StopPoint,
};
use super::SimError;
use crate::bus::{
    Bag, BagMeta, BridgeEvent, BridgeServer, Bus, CommandMsg, LightColor, LightMsg, MessageKind, PathMsg, Payload,
    PedestrianMsg, PoseMsg, SamplingProcess, SensorMsg, SensorObject, TwistMsg, TOPIC_VIL_POSE, TOPIC_VIL_TWIST,
};
use crate::control::{manager_step, ManagerConfig, PathTracker, WaypointPath};
use crate::dynamics::{heading_increment, kinematic_step, pd_accel, KinematicParams, PdMemory, VehicleState};
use crate::safety::{paper_strategy, Shield, ShieldKind};
use crate::twin::{twin_step, HistoryWindow, TwinNetwork};

pub const TOPIC_POSE: &str = "pose";
pub const TOPIC_TWIST: &str = "twist";
pub const TOPIC_PATH: &str = "path";
pub const TOPIC_SENSOR: &str = "sensor";
pub const TOPIC_LIGHT: &str = "light";
pub const TOPIC_PEDESTRIAN: &str = "pedestrian";
pub const TOPIC_COMMAND: &str = "command";

/// Speed below which a vehicle counts as stopped.
const STOPPED: f64 = 0.1;
/// Time a vehicle gets to come to rest once a red light is within the
/// emergency band.
const STOP_DEADLINE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeTimeouts {
    /// How long to wait for a client before the first step.
    pub connect: Duration,
    /// How long one vehicle round trip may take.
    pub step: Duration,
}

impl Default for BridgeTimeouts {
    fn default() -> Self {
        Self { connect: Duration::from_secs(10), step: Duration::from_secs(5) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub duration: f64,
    pub seed: u64,
    pub bridge: BridgeTimeouts,
}

impl RunConfig {
    pub fn new(duration: f64, seed: u64) -> Self {
        Self { duration, seed, bridge: BridgeTimeouts::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: u32,
    pub model: ModelKind,
    pub laps: u64,
    /// Arc length driven along the path.
    pub progress: f64,
    pub red_light_violations: u64,
    /// Episodes where a red light sat inside the emergency band and the
    /// vehicle was not at rest within the deadline.
    pub compliance_breaches: u64,
    /// Steps where the shield saw an input outside its assumptions.
    pub shield_holds: u64,
    pub trajectory: Vec<TrajSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub duration: f64,
    pub steps: u64,
    pub red_light_violations: u64,
    /// `None` when no pedestrian was ever on a crossing.
    pub min_pedestrian_clearance: Option<f64>,
    /// `None` with fewer than two vehicles.
    pub min_vehicle_clearance: Option<f64>,
    pub vehicles: Vec<VehicleMetrics>,
}

impl RunMetrics {
    pub fn vehicle(&self, id: u32) -> Option<&VehicleMetrics> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn compliance_breaches(&self) -> u64 {
        self.vehicles.iter().map(|v| v.compliance_breaches).sum()
    }

    /// The metrics without trajectories, for printing.
    pub fn summary(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("metrics serialize");
        for veh in v["vehicles"].as_array_mut().into_iter().flatten() {
            veh.as_object_mut().map(|o| o.remove("trajectory"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub bag: Bag,
    pub metrics: RunMetrics,
}

enum Model {
    Kinematic { mem: PdMemory },
    Twin { net: Arc<TwinNetwork>, window: HistoryWindow },
    Bridge,
}

struct Car {
    id: u32,
    model: Model,
    path: WaypointPath,
    tracker: PathTracker,
    state: VehicleState,
    params: KinematicParams,
    cfg: ManagerConfig,
    shield: Shield,
    lights: Vec<(usize, StopPoint)>,
    crossings: Vec<StopPoint>,
    prev_s: Option<f64>,
    urgent_since: Option<f64>,
    breached: bool,
    metrics: VehicleMetrics,
}

struct Light {
    id: u32,
    position: [f64; 2],
    schedule: LightSchedule,
}

struct World {
    cars: Vec<Car>,
    lights: Vec<Light>,
    peds: Vec<Pedestrian>,
    horizon: f64,
    yellow_is_red: bool,
    red_grace: f64,
    d_emr: f64,
}

fn scale_cfg(mut cfg: ManagerConfig, k: f64) -> ManagerConfig {
    cfg.pp.lookahead *= k;
    cfg.acc.d_min *= k;
    cfg.lateral_gap *= k;
    cfg.sensor_range *= k;
    cfg
}

fn scale_point(p: [f64; 2], k: f64) -> [f64; 2] {
    [p[0] * k, p[1] * k]
}

impl World {
    fn build(sc: &Scenario) -> Result<Self, SimError> {
        sc.validate()?;
        let k = sc.scale;
        let mut filter = sc.filter;
        filter.d_det *= k;
        filter.d_emr *= k;
        let tracks: BTreeMap<&str, WaypointPath> = sc
            .tracks
            .iter()
            .map(|t| Ok((t.name.as_str(), t.geometry.build(k).map_err(SimError::Config)?)))
            .collect::<Result<_, SimError>>()?;
        let strategy = if sc.vehicles.iter().any(|v| v.shield == ShieldKind::Gr1) {
            Some(Arc::new(paper_strategy().map_err(|e| SimError::Runtime(e.to_string()))?))
        } else {
            None
        };
        let mut nets: BTreeMap<PathBuf, Arc<TwinNetwork>> = BTreeMap::new();

        let lights: Vec<Light> = sc
            .lights
            .iter()
            .map(|l| Light {
                id: l.id,
                position: scale_point(l.position.unwrap_or(l.stop_line), k),
                schedule: l.schedule,
            })
            .collect();

        let mut cars = Vec::new();
        for v in &sc.vehicles {
            let track = &tracks[v.track.as_str()];
            let path = driving_path(track, v.direction);
            let s0 = path.wrap(v.start_s * k);
            let [x, y] = path.point_at(s0);
            let state = VehicleState::new(x, y, path.heading_at(s0), 0.0);
            let model = match v.model {
                ModelKind::Kinematic => Model::Kinematic { mem: PdMemory::new(0.0, 0.0) },
                ModelKind::Bridge => Model::Bridge,
                ModelKind::Twin => {
                    let rel = v
                        .weights
                        .as_ref()
                        .ok_or_else(|| SimError::Config(format!("twin vehicle {} has no weights file", v.id)))?;
                    let file = sc.resolve(rel);
                    let net = match nets.get(&file) {
                        Some(n) => Arc::clone(n),
                        None => {
                            let n = Arc::new(
                                TwinNetwork::load(&file)
                                    .map_err(|e| SimError::Config(format!("{}: {e}", file.display())))?,
                            );
                            nets.insert(file, Arc::clone(&n));
                            n
                        }
                    };
                    let window = HistoryWindow::zeros(net.window);
                    Model::Twin { net, window }
                }
            };
            let shield = match v.shield {
                ShieldKind::Rule => Shield::rule(filter),
                ShieldKind::Gr1 => Shield::gr1(Arc::clone(strategy.as_ref().unwrap()), filter)
                    .map_err(|e| SimError::Runtime(e.to_string()))?,
            };
            let car_lights = sc
                .lights
                .iter()
                .enumerate()
                .filter(|(_, l)| l.track == v.track && l.direction == v.direction)
                .map(|(i, l)| {
                    let native = track.project(scale_point(l.stop_line, k)).s;
                    let s = match v.direction {
                        Direction::Forward => native,
                        Direction::Reverse => path.wrap(path.length() - native),
                    };
                    (i, StopPoint { kind: HazardKind::RedLight, source: l.id, s })
                })
                .collect();
            let crossings =
                sc.crossings
                    .iter()
                    .flat_map(|c| {
                        segment_crossings(&path, scale_point(c.a, k), scale_point(c.b, k))
                            .into_iter()
                            .map(|s| StopPoint { kind: HazardKind::Pedestrian, source: c.id, s })
                    })
                    .collect();
            cars.push(Car {
                id: v.id,
                model,
                path,
                tracker: PathTracker::new(),
                state,
                params: v.dynamics,
                cfg: scale_cfg(v.controller, k),
                shield,
                lights: car_lights,
                crossings,
                prev_s: None,
                urgent_since: None,
                breached: false,
                metrics: VehicleMetrics {
                    id: v.id,
                    model: v.model,
                    laps: 0,
                    progress: 0.0,
                    red_light_violations: 0,
                    compliance_breaches: 0,
                    shield_holds: 0,
                    trajectory: Vec::new(),
                },
            });
        }

        let peds = sc
            .pedestrians
            .iter()
            .map(|p| {
                let c = sc.crossing(p.crossing).expect("validated reference");
                let mut ped =
                    Pedestrian::new(p.id, c.id, scale_point(c.a, k), scale_point(c.b, k), scale_point(p.home, k));
                ped.walk_speed = p.walk_speed;
                ped.trigger_radius = p.trigger_radius.unwrap_or(c.trigger_radius) * k;
                ped.yield_radius = p.yield_radius * k;
                ped
            })
            .collect();

        Ok(World {
            cars,
            lights,
            peds,
            horizon: sc.hazard_horizon * k,
            yellow_is_red: sc.yellow_is_red,
            red_grace: sc.red_grace,
            d_emr: filter.d_emr,
        })
    }

    fn light_blocks(&self, i: usize, t: f64) -> bool {
        match self.lights[i].schedule.phase(t).0 {
            LightColor::Red => true,
            LightColor::Yellow => self.yellow_is_red,
            LightColor::Green => false,
        }
    }

    fn hazard(&self, car: &Car, s: f64, t: f64) -> Option<HazardQuery> {
        let lights = car.lights.iter().filter(|(i, _)| self.light_blocks(*i, t)).map(|(_, p)| p);
        let peds =
            car.crossings.iter().filter(|p| self.peds.iter().any(|ped| ped.is_walking() && ped.crossing == p.source));
        hazard_query(&car.path, s, lights.chain(peds), self.horizon)
    }
}

fn twist(id: u32, s: &VehicleState, delta: f64, wheelbase: f64) -> TwistMsg {
    TwistMsg { id, v: s.v, yaw_rate: heading_increment(s.v, delta, 1.0, wheelbase) }
}

fn pose(id: u32, s: &VehicleState) -> PoseMsg {
    PoseMsg { id, x: s.x, y: s.y, theta: s.theta }
}

fn advertise_all(bus: &mut Bus, with_bridge: bool) {
    let mut topics = vec![
        (TOPIC_POSE, MessageKind::Pose),
        (TOPIC_TWIST, MessageKind::Twist),
        (TOPIC_PATH, MessageKind::Path),
        (TOPIC_SENSOR, MessageKind::Sensor),
        (TOPIC_LIGHT, MessageKind::Light),
        (TOPIC_PEDESTRIAN, MessageKind::Pedestrian),
        (TOPIC_COMMAND, MessageKind::Command),
    ];
    if with_bridge {
        topics.push((TOPIC_VIL_POSE, MessageKind::Pose));
        topics.push((TOPIC_VIL_TWIST, MessageKind::Twist));
    }
    for (t, k) in topics {
        bus.advertise(t, k).expect("fresh bus");
    }
}

fn publish(bus: &mut Bus, topic: &str, p: Payload) {
    bus.publish(topic, p).expect("engine topics are advertised with matching kinds");
}

/// Runs a scenario for `cfg.duration` simulated seconds.
///
/// Scenarios with bridge vehicles need `bridge`; the run waits for a client
/// to subscribe to the command topic before the first step. A bridge failure
/// aborts the run with [`SimError::BridgeAbort`], which carries everything
/// recorded up to that point.
pub fn engine_run(
    scenario: &Scenario,
    cfg: &RunConfig,
    mut bridge: Option<&mut BridgeServer>,
) -> Result<RunOutput, SimError> {
    if !(cfg.duration >= 0.0 && cfg.duration.is_finite()) {
        return Err(SimError::Config(format!("duration {} must be finite and non-negative", cfg.duration)));
    }
    let mut world = World::build(scenario)?;
    let needs_bridge = scenario.needs_bridge();
    if needs_bridge && bridge.is_none() {
        return Err(SimError::Config("scenario has bridge vehicles but no bridge is listening".into()));
    }
    let mut bus = Bus::new();
    advertise_all(&mut bus, needs_bridge);
    let mut sampler = SamplingProcess::new(scenario.sampling.delta_nom, scenario.sampling.jitter, cfg.seed);
    let mut run = Recorder {
        bag: Bag::new(BagMeta::new(cfg.seed, scenario.name.clone())),
        min_ped: None,
        min_car: None,
        steps: 0,
    };

    if needs_bridge {
        let server = bridge.as_deref_mut().unwrap();
        if let Err(reason) = await_client(server, &mut bus, cfg.bridge.connect) {
            return Err(run.abort(&mut bus, world, reason));
        }
    }

    for car in &world.cars {
        let points = car.path.points().to_vec();
        publish(&mut bus, TOPIC_PATH, Payload::Path(PathMsg { id: car.id, cyclic: true, points }));
    }
    publish_world(&mut bus, &world, 0.0);
    for car in &mut world.cars {
        publish(&mut bus, TOPIC_POSE, Payload::Pose(pose(car.id, &car.state)));
        publish(&mut bus, TOPIC_TWIST, Payload::Twist(twist(car.id, &car.state, 0.0, car.params.wheelbase)));
        car.metrics.trajectory.push(sample(0.0, &car.state));
    }
    run.observe(&world);
    run.flush(&mut bus);

    while bus.now() < cfg.duration {
        let t = bus.now();
        let dt = sampler.sample();
        let before: Vec<VehicleState> = world.cars.iter().map(|c| c.state).collect();
        let positions: Vec<[f64; 2]> = before.iter().map(|s| [s.x, s.y]).collect();
        for ped in &mut world.peds {
            pedestrian_step(ped, &positions, dt);
        }
        let t1 = bus.advance(dt).map_err(|e| SimError::Runtime(e.to_string()))?;
        publish_world(&mut bus, &world, t1);
        let sensors: Vec<Vec<SensorObject>> = world
            .cars
            .iter()
            .map(|me| {
                world
                    .cars
                    .iter()
                    .zip(&before)
                    .filter(|(o, _)| o.id != me.id)
                    .map(|(o, s)| SensorObject { id: o.id, x: s.x, y: s.y, theta: s.theta, v: s.v })
                    .collect()
            })
            .collect();
        for (car, objects) in world.cars.iter().zip(&sensors) {
            publish(&mut bus, TOPIC_SENSOR, Payload::Sensor(SensorMsg { id: car.id, objects: objects.clone() }));
        }

        for (i, objects) in sensors.iter().enumerate() {
            let out = {
                let car = &mut world.cars[i];
                manager_step(&car.state, objects, &car.path, &mut car.tracker, &car.cfg)
                    .map_err(|e| SimError::Runtime(format!("vehicle {}: {e}", car.id)))?
            };
            let s = world.cars[i].tracker.s().expect("tracker updated");
            world.check_red_crossing(i, s, t);
            let hazard = world.hazard(&world.cars[i], s, t1);
            let d_emr = world.d_emr;
            let car = &mut world.cars[i];
            track_compliance(car, hazard, d_emr, t1);
            let shielded =
                car.shield.filter(out.v_cmd, hazard.map(|h| h.d)).map_err(|e| SimError::Runtime(e.to_string()))?;
            if shielded.held {
                car.metrics.shield_holds += 1;
            }
            let mut failure = None;
            let cmd = CommandMsg { id: car.id, delta: out.delta, u: shielded.u, dt };
            publish(&mut bus, TOPIC_COMMAND, Payload::Command(cmd));
            let next = match &mut car.model {
                Model::Kinematic { mem } => {
                    let (a, m) = pd_accel(shielded.u, car.state.v, *mem, dt, &car.params)
                        .map_err(|e| SimError::Runtime(e.to_string()))?;
                    *mem = m;
                    kinematic_step(&car.state, out.delta, a, dt, &car.params)
                        .map_err(|e| SimError::Runtime(e.to_string()))?
                }
                Model::Twin { net, window } => {
                    let (next, w) = twin_step(net, window, &car.state, out.delta, shielded.u, dt, &car.params)
                        .map_err(|e| SimError::Runtime(e.to_string()))?;
                    *window = w;
                    next
                }
                Model::Bridge => {
                    let server = bridge.as_deref_mut().expect("checked above");
                    match round_trip(server, &mut bus, car.id, cfg.bridge.step) {
                        Ok(s) => s,
                        Err(reason) => {
                            let reason = format!("vehicle {} at t = {t1:.3} s: {reason}", car.id);
                            failure = Some(reason);
                            car.state
                        }
                    }
                }
            };
            if let Some(reason) = failure {
                return Err(run.abort(&mut bus, world, reason));
            }
            if !next.is_finite() {
                return Err(SimError::Runtime(format!("vehicle {} state became non-finite at t = {t1}", car.id)));
            }
            car.state = next;
            car.metrics.progress = out.progress;
            publish(&mut bus, TOPIC_POSE, Payload::Pose(pose(car.id, &car.state)));
            publish(&mut bus, TOPIC_TWIST, Payload::Twist(twist(car.id, &car.state, out.delta, car.params.wheelbase)));
            car.metrics.trajectory.push(sample(t1, &car.state));
        }
        run.steps += 1;
        run.observe(&world);
        if let Some(server) = bridge.as_deref_mut() {
            server.forward(&mut bus);
            server.tick(&mut bus);
        }
        run.flush(&mut bus);
    }
    let t_end = bus.now();
    info!("run finished at t = {t_end:.3} s after {} steps", run.steps);
    Ok(run.finish(&mut bus, world, t_end))
}

fn sample(t: f64, s: &VehicleState) -> TrajSample {
    TrajSample { t, x: s.x, y: s.y, theta: s.theta, v: s.v }
}

fn publish_world(bus: &mut Bus, world: &World, t: f64) {
    for l in &world.lights {
        let color = l.schedule.phase(t).0;
        publish(bus, TOPIC_LIGHT, Payload::Light(LightMsg { id: l.id, color, position: l.position }));
    }
    for p in &world.peds {
        publish(
            bus,
            TOPIC_PEDESTRIAN,
            Payload::Pedestrian(PedestrianMsg { id: p.id, velocity: p.velocity(), position: p.position }),
        );
    }
}

impl World {
    /// Counts a violation when the vehicle passed a stop-line since the last
    /// step while the light had been red for longer than the grace period.
    fn check_red_crossing(&mut self, i: usize, s: f64, t: f64) {
        let Some(prev) = self.cars[i].prev_s.replace(s) else {
            return;
        };
        let car = &self.cars[i];
        let moved = car.path.forward_offset(prev, s);
        if moved <= 0.0 || moved > car.path.length() / 2.0 {
            return;
        }
        let mut hits = 0;
        for (li, stop) in &car.lights {
            let off = car.path.forward_offset(prev, stop.s);
            if off > 0.0 && off <= moved && self.light_blocks(*li, t) {
                let (color, age) = self.lights[*li].schedule.phase(t);
                // a yellow treated as red is also granted the grace period
                if color != LightColor::Red || age > self.red_grace {
                    warn!("vehicle {} crossed stop-line of light {} at t = {t:.3}", car.id, stop.source);
                    hits += 1;
                }
            }
        }
        self.cars[i].metrics.red_light_violations += hits;
    }
}

fn track_compliance(car: &mut Car, hazard: Option<HazardQuery>, d_emr: f64, t: f64) {
    let urgent = hazard.is_some_and(|h| h.kind == HazardKind::RedLight && h.d <= d_emr);
    if !urgent {
        car.urgent_since = None;
        car.breached = false;
        return;
    }
    let since = *car.urgent_since.get_or_insert(t);
    if t - since > STOP_DEADLINE && car.state.v >= STOPPED && !car.breached {
        warn!("vehicle {} still moving {:.2} s after a red light entered the emergency band", car.id, t - since);
        car.breached = true;
        car.metrics.compliance_breaches += 1;
    }
}

struct Recorder {
    bag: Bag,
    min_ped: Option<f64>,
    min_car: Option<f64>,
    steps: u64,
}

fn fold_min(acc: &mut Option<f64>, x: f64) {
    *acc = Some(acc.map_or(x, |a| a.min(x)));
}

impl Recorder {
    fn observe(&mut self, world: &World) {
        for (i, a) in world.cars.iter().enumerate() {
            for b in &world.cars[i + 1..] {
                fold_min(&mut self.min_car, dist([a.state.x, a.state.y], [b.state.x, b.state.y]));
            }
            for p in world.peds.iter().filter(|p| p.is_walking()) {
                fold_min(&mut self.min_ped, dist([a.state.x, a.state.y], p.position));
            }
        }
    }

    fn flush(&mut self, bus: &mut Bus) {
        let now = bus.now();
        for m in bus.drain(now) {
            self.bag.push(m);
        }
    }

    fn finish(mut self, bus: &mut Bus, world: World, t_end: f64) -> RunOutput {
        self.flush(bus);
        let vehicles: Vec<VehicleMetrics> = world
            .cars
            .into_iter()
            .map(|c| {
                let mut m = c.metrics;
                m.laps = c.tracker.laps(&c.path);
                m
            })
            .collect();
        let metrics = RunMetrics {
            duration: t_end,
            steps: self.steps,
            red_light_violations: vehicles.iter().map(|v| v.red_light_violations).sum(),
            min_pedestrian_clearance: self.min_ped,
            min_vehicle_clearance: self.min_car,
            vehicles,
        };
        RunOutput { bag: self.bag, metrics }
    }

    fn abort(self, bus: &mut Bus, world: World, reason: String) -> SimError {
        warn!("run aborted: {reason}");
        let t = bus.now();
        SimError::BridgeAbort { reason, partial: Box::new(self.finish(bus, world, t)) }
    }
}

fn await_client(server: &mut BridgeServer, bus: &mut Bus, timeout: Duration) -> Result<(), String> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match server.wait_event(bus, left) {
            Ok(Some(BridgeEvent::Subscribed { topic, .. })) if topic == TOPIC_COMMAND => return Ok(()),
            Ok(Some(_)) => {}
            Ok(None) => return Err(format!("no bridge client subscribed within {timeout:?}")),
            Err(e) => return Err(e.to_string()),
        }
    }
}

/// Sends pending traffic to the clients and waits for the vehicle's
/// measured pose and twist.
fn round_trip(server: &mut BridgeServer, bus: &mut Bus, id: u32, timeout: Duration) -> Result<VehicleState, String> {
    server.forward(bus);
    let deadline = Instant::now() + timeout;
    let mut got_pose: Option<PoseMsg> = None;
    let mut got_twist: Option<TwistMsg> = None;
    loop {
        if let (Some(p), Some(tw)) = (&got_pose, &got_twist) {
            return Ok(VehicleState::new(p.x, p.y, p.theta, tw.v));
        }
        let left = deadline.saturating_duration_since(Instant::now());
        match server.wait_event(bus, left) {
            Ok(Some(BridgeEvent::Published { message, .. })) => match message.payload {
                Payload::Pose(p) if message.topic == TOPIC_VIL_POSE && p.id == id => got_pose = Some(p),
                Payload::Twist(tw) if message.topic == TOPIC_VIL_TWIST && tw.id == id => got_twist = Some(tw),
                _ => {}
            },
            Ok(Some(BridgeEvent::Disconnected { client, reason })) if server.client_count() == 0 => {
                return Err(format!(
                    "bridge client {client} disconnected{}",
                    reason.map(|r| format!(" ({r})")).unwrap_or_default()
                ));
            }
            Ok(Some(_)) => {}
            Ok(None) => return Err(format!("no state report within {timeout:?}")),
            Err(e) => return Err(e.to_string()),
        }
    }
}
