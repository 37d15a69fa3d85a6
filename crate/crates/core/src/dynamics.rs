//! Kinematic bicycle model with a PD velocity loop, plus a dead-zone /
//! first-order-lag plant used as synthetic ground truth.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::SamplingProcess;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("steering {delta} rad exceeds limit {limit} rad")]
    SteeringLimit { delta: f64, limit: f64 },
    #[error("lag time constant must be positive, got {0}")]
    BadLag(f64),
    #[error("empty command stream")]
    NoCommands,
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

/// Steering angle `delta` (rad) and velocity command `u` (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta: f64,
    pub u: f64,
}

impl ControlInput {
    pub fn new(delta: f64, u: f64) -> Self {
        Self { delta, u }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicParams {
    pub wheelbase: f64,
    pub kp: f64,
    pub kd: f64,
    pub delta_max: f64,
    pub v_max: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self { wheelbase: 0.32, kp: 2.0, kd: 0.1, delta_max: 0.4189, v_max: 4.0 }
    }
}

impl KinematicParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = self.wheelbase > 0.0
            && self.kp >= 0.0
            && self.kd >= 0.0
            && self.v_max >= 0.0
            && self.delta_max >= 0.0
            && self.delta_max < FRAC_PI_2;
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::BadParams(format!("{self:?}")))
        }
    }

    pub fn check_steering(&self, delta: f64) -> Result<(), DynamicsError> {
        if !(delta.abs() <= self.delta_max && delta.abs() < FRAC_PI_2) {
            return Err(DynamicsError::SteeringLimit { delta, limit: self.delta_max });
        }
        Ok(())
    }
}

/// Previous command and velocity for the finite-difference derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PdMemory {
    pub u_prev: f64,
    pub v_prev: f64,
}

impl PdMemory {
    /// Seeded with the initial values so the first derivative estimates are zero.
    pub fn new(u0: f64, v0: f64) -> Self {
        Self { u_prev: u0, v_prev: v0 }
    }
}

/// `a = kp·(u − v) + kd·(u̇ − v̇)` with backward-difference derivatives.
pub fn pd_accel(
    u: f64,
    v: f64,
    mem: PdMemory,
    dt: f64,
    params: &KinematicParams,
) -> Result<(f64, PdMemory), DynamicsError> {
    check_dt(dt)?;
    let u_dot = (u - mem.u_prev) / dt;
    let v_dot = (v - mem.v_prev) / dt;
    let a = params.kp * (u - v) + params.kd * (u_dot - v_dot);
    Ok((a, PdMemory { u_prev: u, v_prev: v }))
}

/// Heading change over one step; shared by every model that reuses the
/// bicycle position rows.
#[inline]
pub fn heading_increment(v: f64, delta: f64, dt: f64, wheelbase: f64) -> f64 {
    dt / wheelbase * v * delta.tan()
}

/// Position and heading rows of the bicycle model, advanced with the
/// velocity at the start of the step.
pub fn advance_pose(state: &VehicleState, delta: f64, dt: f64, wheelbase: f64) -> (f64, f64, f64) {
    let x = state.x + dt * state.v * state.theta.cos();
    let y = state.y + dt * state.v * state.theta.sin();
    let theta = state.theta + heading_increment(state.v, delta, dt, wheelbase);
    (x, y, theta)
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn kinematic_step(
    state: &VehicleState,
    delta: f64,
    a: f64,
    dt: f64,
    params: &KinematicParams,
) -> Result<VehicleState, DynamicsError> {
    check_dt(dt)?;
    params.check_steering(delta)?;
    let (x, y, theta) = advance_pose(state, delta, dt, params.wheelbase);
    let v = (state.v + dt * a).clamp(0.0, params.v_max);
    Ok(VehicleState { x, y, theta, v })
}

/// A simulated trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: VehicleState,
}

/// Closed PD + kinematic loop over a command stream with sampled step sizes.
/// Returns `commands.len() + 1` points, the first being `init` at `t = 0`.
pub fn simulate(
    init: VehicleState,
    commands: &[ControlInput],
    process: &mut SamplingProcess,
    params: &KinematicParams,
) -> Result<Vec<TrajectoryPoint>, DynamicsError> {
    let first = commands.first().ok_or(DynamicsError::NoCommands)?;
    params.validate()?;
    let mut mem = PdMemory::new(first.u, init.v);
    let mut state = init;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(commands.len() + 1);
    out.push(TrajectoryPoint { t, state });
    for cmd in commands {
        let dt = process.sample();
        let (a, next_mem) = pd_accel(cmd.u, state.v, mem, dt, params)?;
        mem = next_mem;
        state = kinematic_step(&state, cmd.delta, a, dt, params)?;
        t += dt;
        out.push(TrajectoryPoint { t, state });
    }
    Ok(out)
}

/// Writes `t,x,y,theta,v` rows.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &[TrajectoryPoint]) -> std::io::Result<()> {
    use crate::jsonfmt::format_f64 as f;
    writeln!(w, "t,x,y,theta,v")?;
    for p in traj {
        let s = p.state;
        writeln!(w, "{},{},{},{},{}", f(p.t), f(s.x), f(s.y), f(s.theta), f(s.v))?;
    }
    Ok(())
}

/// Ground-truth plant for fidelity experiments: bicycle position rows with a
/// transmission dead zone and a first-order velocity lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub kinematic: KinematicParams,
    pub dead_zone: f64,
    pub tau: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self { kinematic: KinematicParams::default(), dead_zone: 0.3, tau: 0.4 }
    }
}

pub fn synth_plant_step(
    state: &VehicleState,
    delta: f64,
    u: f64,
    dt: f64,
    plant: &PlantParams,
) -> Result<VehicleState, DynamicsError> {
    check_dt(dt)?;
    if !(plant.tau > 0.0) {
        return Err(DynamicsError::BadLag(plant.tau));
    }
    plant.kinematic.check_steering(delta)?;
    let (x, y, theta) = advance_pose(state, delta, dt, plant.kinematic.wheelbase);
    let u_eff = if u.abs() < plant.dead_zone { 0.0 } else { u };
    let v = (state.v + dt * (u_eff - state.v) / plant.tau).clamp(0.0, plant.kinematic.v_max);
    Ok(VehicleState { x, y, theta, v })
}

fn check_dt(dt: f64) -> Result<(), DynamicsError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::BadStep(dt))
    }
}
