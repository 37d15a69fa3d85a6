//! Simulation clock, in-process pub/sub fabric, bag recording and the TCP
//! bridge for external vehicles.
//!
//! The bus is single-threaded. Every publish is stamped with the current
//! clock value and a global sequence number; each subscriber sees its topic
//! in publish order, and [`Bus::drain`] hands out the global stream ordered
//! by `(t, seq)` for recording.

mod bag;
mod bridge;
mod message;
mod sampling;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use bag::{Bag, BagError, BagMeta, BagWriter, BAG_VERSION};
pub use bridge::{
    BridgeClient, BridgeError, BridgeEvent, BridgeServer, ClientOp, ServerOp, TOPIC_VIL_POSE, TOPIC_VIL_TWIST,
};
pub use message::{
    CommandMsg, LightColor, LightMsg, Message, MessageKind, MessageRecord, PathMsg, Payload, PedestrianMsg, PoseMsg,
    SensorMsg, SensorObject, TwistMsg,
};
pub use sampling::{sim_rng, SamplingProcess, SimRng};

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("topic '{0}' is not advertised")]
    UnknownTopic(String),
    #[error("topic '{topic}' carries {expected} messages, got {got}")]
    KindMismatch { topic: String, expected: MessageKind, got: MessageKind },
    #[error("topic '{topic}' already advertised as {existing}")]
    Readvertised { topic: String, existing: MessageKind },
    #[error("no subscriber with id {0}")]
    UnknownSubscriber(usize),
    #[error("clock step must be finite and non-negative, got {0}")]
    BadClockStep(f64),
}

/// Global simulation time. Only moves forward.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimClock {
    t_sim: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.t_sim
    }

    pub fn advance(&mut self, dt: f64) -> Result<f64, BusError> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(BusError::BadClockStep(dt));
        }
        self.t_sim += dt;
        Ok(self.t_sim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriberId(usize);

#[derive(Debug)]
struct Topic {
    kind: MessageKind,
    subscribers: Vec<SubscriberId>,
}

#[derive(Debug)]
struct Subscriber {
    topic: String,
    queue: VecDeque<Message>,
}

#[derive(Debug, Default)]
pub struct Bus {
    clock: SimClock,
    topics: BTreeMap<String, Topic>,
    subscribers: Vec<Option<Subscriber>>,
    pending: Vec<(u64, Message)>,
    next_seq: u64,
    horizon: f64,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn advance(&mut self, dt: f64) -> Result<f64, BusError> {
        self.clock.advance(dt)
    }

    /// Declares a topic. Re-advertising with the same kind is a no-op.
    pub fn advertise(&mut self, topic: &str, kind: MessageKind) -> Result<(), BusError> {
        match self.topics.get(topic) {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(BusError::Readvertised { topic: topic.to_string(), existing: t.kind }),
            None => {
                self.topics.insert(topic.to_string(), Topic { kind, subscribers: Vec::new() });
                Ok(())
            }
        }
    }

    pub fn topic_kind(&self, topic: &str) -> Option<MessageKind> {
        self.topics.get(topic).map(|t| t.kind)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, MessageKind)> {
        self.topics.iter().map(|(name, t)| (name.as_str(), t.kind))
    }

    pub fn subscribe(&mut self, topic: &str) -> Result<SubscriberId, BusError> {
        let id = SubscriberId(self.subscribers.len());
        let entry = self.topics.get_mut(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        entry.subscribers.push(id);
        self.subscribers.push(Some(Subscriber { topic: topic.to_string(), queue: VecDeque::new() }));
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubscriberId) -> Result<(), BusError> {
        let sub = self.subscribers.get_mut(id.0).and_then(Option::take).ok_or(BusError::UnknownSubscriber(id.0))?;
        if let Some(topic) = self.topics.get_mut(&sub.topic) {
            topic.subscribers.retain(|s| *s != id);
        }
        Ok(())
    }

    /// Stamps `payload` with the current clock and fans it out. Returns the
    /// global sequence number.
    pub fn publish(&mut self, topic: &str, payload: Payload) -> Result<u64, BusError> {
        let entry = self.topics.get(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        if entry.kind != payload.kind() {
            return Err(BusError::KindMismatch { topic: topic.to_string(), expected: entry.kind, got: payload.kind() });
        }
        let msg = Message { t: self.clock.now(), topic: topic.to_string(), payload };
        for sub in &entry.subscribers {
            if let Some(Some(s)) = self.subscribers.get_mut(sub.0) {
                s.queue.push_back(msg.clone());
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push((seq, msg));
        Ok(seq)
    }

    /// Pops everything queued for one subscriber, oldest first.
    pub fn receive(&mut self, id: SubscriberId) -> Result<Vec<Message>, BusError> {
        let sub = self.subscribers.get_mut(id.0).and_then(Option::as_mut).ok_or(BusError::UnknownSubscriber(id.0))?;
        Ok(sub.queue.drain(..).collect())
    }

    pub fn pending_for(&self, id: SubscriberId) -> usize {
        self.subscribers.get(id.0).and_then(Option::as_ref).map_or(0, |s| s.queue.len())
    }

    /// Removes and returns every recorded message with `t <= until`, ordered
    /// by `(t, publish sequence)`.
    pub fn drain(&mut self, until: f64) -> Vec<Message> {
        self.horizon = self.horizon.max(until);
        let (mut ready, keep): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|(_, m)| m.t <= until);
        self.pending = keep;
        ready.sort_by(|(sa, a), (sb, b)| a.t.total_cmp(&b.t).then(sa.cmp(sb)));
        ready.into_iter().map(|(_, m)| m).collect()
    }

    /// Largest `until` passed to [`Bus::drain`] so far.
    pub fn delivered_horizon(&self) -> f64 {
        self.horizon
    }
}
