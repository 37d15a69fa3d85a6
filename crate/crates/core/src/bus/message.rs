use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Pose,
    Twist,
    Path,
    Sensor,
    Light,
    Pedestrian,
    Command,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Pose,
        MessageKind::Twist,
        MessageKind::Path,
        MessageKind::Sensor,
        MessageKind::Light,
        MessageKind::Pedestrian,
        MessageKind::Command,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Pose => "pose",
            MessageKind::Twist => "twist",
            MessageKind::Path => "path",
            MessageKind::Sensor => "sensor",
            MessageKind::Light => "light",
            MessageKind::Pedestrian => "pedestrian",
            MessageKind::Command => "command",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL.iter().copied().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown message kind '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightColor {
    Red,
    Yellow,
    Green,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwistMsg {
    pub id: u32,
    pub v: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMsg {
    pub id: u32,
    pub cyclic: bool,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorObject {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

/// Other traffic participants as seen from vehicle `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMsg {
    pub id: u32,
    pub objects: Vec<SensorObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightMsg {
    pub id: u32,
    pub color: LightColor,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianMsg {
    pub id: u32,
    pub velocity: [f64; 2],
    pub position: [f64; 2],
}

impl PedestrianMsg {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Filtered actuation command for one vehicle over the next `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMsg {
    pub id: u32,
    pub delta: f64,
    pub u: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
pub enum Payload {
    Pose(PoseMsg),
    Twist(TwistMsg),
    Path(PathMsg),
    Sensor(SensorMsg),
    Light(LightMsg),
    Pedestrian(PedestrianMsg),
    Command(CommandMsg),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Pose(_) => MessageKind::Pose,
            Payload::Twist(_) => MessageKind::Twist,
            Payload::Path(_) => MessageKind::Path,
            Payload::Sensor(_) => MessageKind::Sensor,
            Payload::Light(_) => MessageKind::Light,
            Payload::Pedestrian(_) => MessageKind::Pedestrian,
            Payload::Command(_) => MessageKind::Command,
        }
    }

    /// The record body without the kind tag.
    pub fn data(&self) -> Value {
        let tagged = serde_json::to_value(self).expect("payloads are plain data");
        match tagged {
            Value::Object(mut map) => map.remove("data").unwrap_or(Value::Null),
            _ => unreachable!("adjacently tagged enum serializes to an object"),
        }
    }

    pub fn from_parts(kind: MessageKind, data: Value) -> Result<Self, serde_json::Error> {
        let mut map = serde_json::Map::with_capacity(2);
        map.insert("kind".into(), Value::String(kind.as_str().into()));
        map.insert("data".into(), data);
        serde_json::from_value(Value::Object(map))
    }
}

/// Timestamped topic traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub t: f64,
    pub topic: String,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn to_record(&self) -> MessageRecord {
        MessageRecord { t: self.t, topic: self.topic.clone(), kind: self.kind(), data: self.payload.data() }
    }
}

/// On-disk / on-wire shape of a [`Message`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub t: f64,
    pub topic: String,
    pub kind: MessageKind,
    pub data: Value,
}

impl TryFrom<MessageRecord> for Message {
    type Error = serde_json::Error;

    fn try_from(rec: MessageRecord) -> Result<Self, Self::Error> {
        Ok(Message { t: rec.t, topic: rec.topic, payload: Payload::from_parts(rec.kind, rec.data)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_parts_round_trip() {
        let p = Payload::Light(LightMsg { id: 2, color: LightColor::Yellow, position: [1.5, -3.0] });
        let back = Payload::from_parts(p.kind(), p.data()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let p = Payload::Twist(TwistMsg { id: 1, v: 1.0, yaw_rate: 0.0 });
        assert!(Payload::from_parts(MessageKind::Pose, p.data()).is_err());
    }

    #[test]
    fn pedestrian_speed() {
        let p = PedestrianMsg { id: 0, velocity: [3.0, 4.0], position: [0.0, 0.0] };
        assert_eq!(p.speed(), 5.0);
    }
}
