//! Stand-in for physical hardware on the bridge: a process that receives
//! commands for one vehicle, integrates its own dynamics and reports the
//! measured state back.

use std::net::ToSocketAddrs;
use std::time::Duration;

use log::info;

use super::engine::{TOPIC_COMMAND, TOPIC_POSE, TOPIC_TWIST};
use crate::bus::{BridgeClient, BridgeError, Payload, PoseMsg, ServerOp, TwistMsg, TOPIC_VIL_POSE, TOPIC_VIL_TWIST};
use crate::dynamics::{heading_increment, kinematic_step, pd_accel, KinematicParams, PdMemory, VehicleState};

#[derive(Debug, Clone)]
pub struct VilClientConfig {
    pub vehicle: u32,
    pub params: KinematicParams,
    /// Hang up after this many commands; simulates a dropped link.
    pub stop_after: Option<usize>,
    /// Give up when the server is silent this long.
    pub idle_timeout: Duration,
}

impl VilClientConfig {
    pub fn new(vehicle: u32) -> Self {
        Self { vehicle, params: KinematicParams::default(), stop_after: None, idle_timeout: Duration::from_secs(30) }
    }
}

/// Runs the client until the server closes the session. Returns the number
/// of commands executed.
pub fn run_vil_client(addr: impl ToSocketAddrs, cfg: &VilClientConfig) -> Result<usize, BridgeError> {
    let mut client = BridgeClient::connect(addr)?;
    for topic in [TOPIC_POSE, TOPIC_TWIST, TOPIC_COMMAND] {
        client.subscribe(topic)?;
    }
    let id = cfg.vehicle;
    let mut state: Option<VehicleState> = None;
    let mut mem = PdMemory::new(0.0, 0.0);
    let mut steps = 0;
    loop {
        let op = match client.recv(Some(cfg.idle_timeout)) {
            Ok(op) => op,
            Err(BridgeError::Closed) => break,
            Err(e) => return Err(e),
        };
        let ServerOp::Msg { .. } = &op else {
            if let ServerOp::Error { reason } = op {
                return Err(BridgeError::Protocol(reason));
            }
            continue;
        };
        let Some(msg) = op.into_message() else { continue };
        match msg.payload {
            // the engine's initial report; later ones echo our own
            Payload::Pose(p) if p.id == id && steps == 0 => {
                let v = state.map_or(0.0, |s| s.v);
                state = Some(VehicleState::new(p.x, p.y, p.theta, v));
            }
            Payload::Twist(tw) if tw.id == id && steps == 0 => {
                if let Some(s) = state.as_mut() {
                    s.v = tw.v;
                }
                mem = PdMemory::new(0.0, tw.v);
            }
            Payload::Command(c) if c.id == id => {
                let s = state.ok_or_else(|| BridgeError::Protocol("command before initial pose".into()))?;
                let (a, m) =
                    pd_accel(c.u, s.v, mem, c.dt, &cfg.params).map_err(|e| BridgeError::Protocol(e.to_string()))?;
                mem = m;
                let next = kinematic_step(&s, c.delta, a, c.dt, &cfg.params)
                    .map_err(|e| BridgeError::Protocol(e.to_string()))?;
                state = Some(next);
                client
                    .publish(TOPIC_VIL_POSE, &Payload::Pose(PoseMsg { id, x: next.x, y: next.y, theta: next.theta }))?;
                let yaw_rate = heading_increment(next.v, c.delta, 1.0, cfg.params.wheelbase);
                client.publish(TOPIC_VIL_TWIST, &Payload::Twist(TwistMsg { id, v: next.v, yaw_rate }))?;
                steps += 1;
                if cfg.stop_after.is_some_and(|n| steps >= n) {
                    info!("vil client hanging up after {steps} commands");
                    client.close();
                    return Ok(steps);
                }
            }
            _ => {}
        }
    }
    Ok(steps)
}
