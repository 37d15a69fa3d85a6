use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::engine::{RunMetrics, TOPIC_POSE, TOPIC_TWIST};
use super::SimError;
use crate::bus::{Bag, Payload};
use crate::jsonfmt::format_f64 as fmt;

/// Grid spacing for model comparison, matching the nominal loop period.
pub const COMPARE_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub position_rmse: f64,
    pub velocity_mse: f64,
    pub samples: usize,
}

/// Time-ordered `(t, [x, y])` poses and `(t, v)` speeds of one vehicle.
pub struct Streams {
    pub pose: Vec<(f64, [f64; 2])>,
    pub speed: Vec<(f64, f64)>,
}

pub fn vehicle_streams(bag: &Bag, id: u32) -> Streams {
    let mut pose = Vec::new();
    let mut speed = Vec::new();
    for m in &bag.messages {
        match &m.payload {
            Payload::Pose(p) if m.topic == TOPIC_POSE && p.id == id => pose.push((m.t, [p.x, p.y])),
            Payload::Twist(tw) if m.topic == TOPIC_TWIST && tw.id == id => speed.push((m.t, tw.v)),
            _ => {}
        }
    }
    Streams { pose, speed }
}

/// Piecewise-linear interpolation of `(t, value)` samples; `t` must lie in
/// their span. Repeated timestamps resolve to the later sample.
fn interp<const N: usize>(data: &[(f64, [f64; N])], t: f64) -> [f64; N] {
    let i = data.partition_point(|(ti, _)| *ti <= t);
    if i == 0 {
        return data[0].1;
    }
    if i == data.len() {
        return data[i - 1].1;
    }
    let (t0, a) = data[i - 1];
    let (t1, b) = data[i];
    let f = (t - t0) / (t1 - t0);
    std::array::from_fn(|k| a[k] + f * (b[k] - a[k]))
}

fn grid(a: &[f64], b: &[f64], what: &str) -> Result<Vec<f64>, SimError> {
    let (Some(a0), Some(a1), Some(b0), Some(b1)) = (a.first(), a.last(), b.first(), b.last()) else {
        return Err(SimError::EmptyStream(format!("{what} stream is empty")));
    };
    let (t0, t1) = (a0.max(*b0), a1.min(*b1));
    if t1 < t0 {
        return Err(SimError::EmptyStream(format!("{what} streams do not overlap in time")));
    }
    let n = ((t1 - t0) / COMPARE_DT + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| t0 + k as f64 * COMPARE_DT).collect())
}

/// Position RMSE and velocity MSE between two runs of vehicle `id`, both
/// resampled onto a common uniform grid.
pub fn compare_models(a: &Bag, b: &Bag, id: u32) -> Result<Comparison, SimError> {
    let (sa, sb) = (vehicle_streams(a, id), vehicle_streams(b, id));
    let times = |s: &[(f64, [f64; 2])]| s.iter().map(|p| p.0).collect::<Vec<_>>();
    let pos_grid = grid(&times(&sa.pose), &times(&sb.pose), &format!("vehicle {id} pose"))?;
    let wrap = |s: &[(f64, f64)]| s.iter().map(|&(t, v)| (t, [v])).collect::<Vec<_>>();
    let (va, vb) = (wrap(&sa.speed), wrap(&sb.speed));
    let vt = |s: &[(f64, [f64; 1])]| s.iter().map(|p| p.0).collect::<Vec<_>>();
    let vel_grid = grid(&vt(&va), &vt(&vb), &format!("vehicle {id} twist"))?;

    let sq: f64 = pos_grid
        .iter()
        .map(|&t| {
            let (p, q) = (interp(&sa.pose, t), interp(&sb.pose, t));
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        })
        .sum();
    let vsq: f64 = vel_grid.iter().map(|&t| (interp(&va, t)[0] - interp(&vb, t)[0]).powi(2)).sum();
    Ok(Comparison {
        position_rmse: (sq / pos_grid.len() as f64).sqrt(),
        velocity_mse: vsq / vel_grid.len() as f64,
        samples: pos_grid.len(),
    })
}

pub const TRACE_HEADER: &str = "t,id,x,y,theta,v";

/// One CSV row per pose message, joined with the twist published for the
/// same vehicle at the same time. Returns the row count.
pub fn replay_csv<W: Write>(bag: &Bag, mut w: W) -> std::io::Result<usize> {
    let mut speeds: BTreeMap<(u32, u64), f64> = BTreeMap::new();
    for m in &bag.messages {
        if let Payload::Twist(tw) = &m.payload {
            if m.topic == TOPIC_TWIST {
                speeds.insert((tw.id, m.t.to_bits()), tw.v);
            }
        }
    }
    writeln!(w, "{TRACE_HEADER}")?;
    let mut rows = 0;
    for m in &bag.messages {
        if let Payload::Pose(p) = &m.payload {
            if m.topic != TOPIC_POSE {
                continue;
            }
            let v = speeds.get(&(p.id, m.t.to_bits())).map(|v| fmt(*v)).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{}", fmt(m.t), p.id, fmt(p.x), fmt(p.y), fmt(p.theta), v)?;
            rows += 1;
        }
    }
    Ok(rows)
}

/// Trajectories from run metrics in the same layout, ordered by time then
/// vehicle.
pub fn write_trace_csv<W: Write>(metrics: &RunMetrics, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    let steps = metrics.vehicles.iter().map(|v| v.trajectory.len()).max().unwrap_or(0);
    for k in 0..steps {
        for veh in &metrics.vehicles {
            if let Some(s) = veh.trajectory.get(k) {
                writeln!(w, "{},{},{},{},{},{}", fmt(s.t), veh.id, fmt(s.x), fmt(s.y), fmt(s.theta), fmt(s.v))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{BagMeta, Message, PoseMsg, TwistMsg};

    fn bag(v: f64, shift: f64) -> Bag {
        let mut b = Bag::new(BagMeta::new(0, "t"));
        for k in 0..=500 {
            let t = k as f64 * 0.02;
            let x = v * (t - shift);
            b.push(Message {
                t,
                topic: TOPIC_POSE.into(),
                payload: Payload::Pose(PoseMsg { id: 1, x, y: 0.0, theta: 0.0 }),
            });
            b.push(Message {
                t,
                topic: TOPIC_TWIST.into(),
                payload: Payload::Twist(TwistMsg { id: 1, v, yaw_rate: 0.0 }),
            });
        }
        b
    }

    #[test]
    fn identity_is_zero() {
        let a = bag(1.0, 0.0);
        let c = compare_models(&a, &a, 1).unwrap();
        assert_eq!((c.position_rmse, c.velocity_mse), (0.0, 0.0));
        assert_eq!(c.samples, 501);
    }

    #[test]
    fn constant_speeds_differ_by_one() {
        let c = compare_models(&bag(1.0, 0.0), &bag(2.0, 0.0), 1).unwrap();
        assert!((c.velocity_mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let a = bag(1.0, 0.0);
        assert!(matches!(compare_models(&a, &a, 7), Err(SimError::EmptyStream(_))));
    }

    #[test]
    fn replay_joins_twist() {
        let mut out = Vec::new();
        let rows = replay_csv(&bag(2.0, 0.0), &mut out).unwrap();
        assert_eq!(rows, 501);
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(row, vec![0.02, 1.0, 2.0 * 0.02, 0.0, 0.0, 2.0]);
    }
}
