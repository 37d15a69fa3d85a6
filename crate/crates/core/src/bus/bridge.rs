//! Newline-delimited JSON over TCP, letting an external process stand in for
//! a simulated vehicle.
//!
//! Client → server: `{"op":"sub","topic":..}` and
//! `{"op":"pub","topic":..,"kind":..,"data":{..}}`.
//! Server → client: `{"op":"msg","t":..,"topic":..,"kind":..,"data":{..}}`,
//! `{"op":"tick","t":..}` once per engine step, and `{"op":"error",..}`
//! right before a session is closed for a protocol violation.
//!
//! Socket I/O happens on background threads. Complete client operations are
//! queued and only touch the [`Bus`] when the owner calls [`BridgeServer::pump`]
//! or [`BridgeServer::wait_event`], so the simulation loop stays
//! single-threaded; ingress messages are stamped with the bus clock.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::message::{Message, MessageKind, MessageRecord, Payload};
use super::{Bus, SubscriberId};
use crate::jsonfmt;

/// Topics on which an external vehicle reports its measured state.
pub const TOPIC_VIL_POSE: &str = "vil/pose";
pub const TOPIC_VIL_TWIST: &str = "vil/twist";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bridge I/O: {0}")]
    Io(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("session closed by peer")]
    Closed,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ClientOp {
    Sub { topic: String },
    Pub { topic: String, kind: MessageKind, data: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ServerOp {
    Msg { t: f64, topic: String, kind: MessageKind, data: Value },
    Tick { t: f64 },
    Error { reason: String },
}

impl ServerOp {
    pub fn into_message(self) -> Option<Message> {
        match self {
            ServerOp::Msg { t, topic, kind, data } => Message::try_from(MessageRecord { t, topic, kind, data }).ok(),
            _ => None,
        }
    }
}

pub type ClientId = u64;

/// What the simulation loop learns from [`BridgeServer::pump`].
#[derive(Debug, Clone, PartialEq)]
pub enum BridgeEvent {
    Connected(ClientId),
    Subscribed {
        client: ClientId,
        topic: String,
    },
    /// A client publish, already stamped and delivered on the bus.
    Published {
        client: ClientId,
        message: Message,
    },
    Disconnected {
        client: ClientId,
        reason: Option<String>,
    },
}

enum Ingress {
    Connected(ClientId, TcpStream),
    Op(ClientId, ClientOp),
    Closed(ClientId, Option<String>),
}

struct Session {
    writer: TcpStream,
    subs: Vec<(String, SubscriberId)>,
}

pub struct BridgeServer {
    local_addr: SocketAddr,
    ingress: Receiver<Ingress>,
    sessions: BTreeMap<ClientId, Session>,
    stop: Arc<AtomicBool>,
    listener: Option<JoinHandle<()>>,
    backlog: VecDeque<BridgeEvent>,
}

impl BridgeServer {
    /// Binds and starts accepting. Port 0 picks a free port.
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, BridgeError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let handle =
            thread::Builder::new().name("bridge-accept".into()).spawn(move || accept_loop(listener, tx, stop_flag))?;
        Ok(Self {
            local_addr,
            ingress: rx,
            sessions: BTreeMap::new(),
            stop,
            listener: Some(handle),
            backlog: VecDeque::new(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn client_count(&self) -> usize {
        self.sessions.len()
    }

    /// Applies every queued client operation to the bus without blocking.
    pub fn pump(&mut self, bus: &mut Bus) -> Vec<BridgeEvent> {
        let mut events: Vec<BridgeEvent> = self.backlog.drain(..).collect();
        while let Ok(item) = self.ingress.try_recv() {
            if let Some(ev) = self.apply(bus, item) {
                events.push(ev);
            }
        }
        events
    }

    /// Blocks until one client operation arrives, applies it and returns the
    /// resulting event. `Ok(None)` on timeout.
    pub fn wait_event(&mut self, bus: &mut Bus, timeout: Duration) -> Result<Option<BridgeEvent>, BridgeError> {
        if let Some(ev) = self.backlog.pop_front() {
            return Ok(Some(ev));
        }
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.ingress.recv_timeout(left) {
                Ok(item) => {
                    if let Some(ev) = self.apply(bus, item) {
                        return Ok(Some(ev));
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(BridgeError::Closed),
            }
        }
    }

    fn apply(&mut self, bus: &mut Bus, item: Ingress) -> Option<BridgeEvent> {
        match item {
            Ingress::Connected(id, writer) => {
                self.sessions.insert(id, Session { writer, subs: Vec::new() });
                log::info!("bridge client {id} connected");
                Some(BridgeEvent::Connected(id))
            }
            Ingress::Closed(id, reason) => {
                if !self.sessions.contains_key(&id) {
                    return None;
                }
                self.drop_session(bus, id, None);
                if let Some(r) = &reason {
                    log::warn!("bridge client {id} closed: {r}");
                }
                Some(BridgeEvent::Disconnected { client: id, reason })
            }
            Ingress::Op(id, op) => {
                if !self.sessions.contains_key(&id) {
                    return None;
                }
                match self.apply_op(bus, id, op) {
                    Ok(ev) => Some(ev),
                    Err(reason) => {
                        log::warn!("bridge client {id}: {reason}");
                        self.drop_session(bus, id, Some(&reason));
                        Some(BridgeEvent::Disconnected { client: id, reason: Some(reason) })
                    }
                }
            }
        }
    }

    fn apply_op(&mut self, bus: &mut Bus, id: ClientId, op: ClientOp) -> Result<BridgeEvent, String> {
        match op {
            ClientOp::Sub { topic } => {
                let sub = bus.subscribe(&topic).map_err(|e| e.to_string())?;
                let session = self.sessions.get_mut(&id).expect("checked by caller");
                session.subs.push((topic.clone(), sub));
                Ok(BridgeEvent::Subscribed { client: id, topic })
            }
            ClientOp::Pub { topic, kind, data } => {
                let payload = Payload::from_parts(kind, data).map_err(|e| format!("bad {kind} payload: {e}"))?;
                bus.publish(&topic, payload.clone()).map_err(|e| e.to_string())?;
                Ok(BridgeEvent::Published { client: id, message: Message { t: bus.now(), topic, payload } })
            }
        }
    }

    fn drop_session(&mut self, bus: &mut Bus, id: ClientId, reason: Option<&str>) {
        if let Some(mut s) = self.sessions.remove(&id) {
            if let Some(r) = reason {
                let _ = send_line(&mut s.writer, &ServerOp::Error { reason: r.to_string() });
            }
            let _ = s.writer.shutdown(Shutdown::Both);
            for (_, sub) in s.subs {
                let _ = bus.unsubscribe(sub);
            }
        }
    }

    /// Sends every bus message queued for client subscriptions.
    pub fn forward(&mut self, bus: &mut Bus) {
        let mut dead = Vec::new();
        for (id, session) in self.sessions.iter_mut() {
            'subs: for (_, sub) in &session.subs {
                for msg in bus.receive(*sub).unwrap_or_default() {
                    let rec = msg.to_record();
                    let op = ServerOp::Msg { t: rec.t, topic: rec.topic, kind: rec.kind, data: rec.data };
                    if let Err(e) = send_line(&mut session.writer, &op) {
                        dead.push((*id, e.to_string()));
                        break 'subs;
                    }
                }
            }
        }
        self.bury(bus, dead);
    }

    pub fn tick(&mut self, bus: &mut Bus) {
        let t = bus.now();
        let mut dead = Vec::new();
        for (id, session) in self.sessions.iter_mut() {
            if let Err(e) = send_line(&mut session.writer, &ServerOp::Tick { t }) {
                dead.push((*id, e.to_string()));
            }
        }
        self.bury(bus, dead);
    }

    fn bury(&mut self, bus: &mut Bus, dead: Vec<(ClientId, String)>) {
        for (id, reason) in dead {
            self.drop_session(bus, id, None);
            self.backlog.push_back(BridgeEvent::Disconnected { client: id, reason: Some(reason) });
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for s in self.sessions.values() {
            let _ = s.writer.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.listener.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Ingress>, stop: Arc<AtomicBool>) {
    let mut next_id: ClientId = 1;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id;
                next_id += 1;
                log::debug!("bridge accepted {peer} as client {id}");
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                let (Ok(reader), Ok(errout)) = (stream.try_clone(), stream.try_clone()) else {
                    continue;
                };
                if tx.send(Ingress::Connected(id, stream)).is_err() {
                    return;
                }
                let tx = tx.clone();
                let _ = thread::Builder::new()
                    .name(format!("bridge-client-{id}"))
                    .spawn(move || read_loop(id, reader, errout, tx));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                log::error!("bridge accept failed: {e}");
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn read_loop(id: ClientId, stream: TcpStream, mut errout: TcpStream, tx: Sender<Ingress>) {
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                let _ = tx.send(Ingress::Closed(id, Some(e.to_string())));
                return;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ClientOp>(&line) {
            Ok(op) => {
                if tx.send(Ingress::Op(id, op)).is_err() {
                    return;
                }
            }
            Err(e) => {
                let reason = format!("malformed line: {e}");
                let _ = send_line(&mut errout, &ServerOp::Error { reason: reason.clone() });
                let _ = errout.shutdown(Shutdown::Both);
                let _ = tx.send(Ingress::Closed(id, Some(reason)));
                return;
            }
        }
    }
    let _ = tx.send(Ingress::Closed(id, None));
}

fn send_line<T: Serialize>(w: &mut TcpStream, value: &T) -> io::Result<()> {
    let mut line = jsonfmt::to_string(value).map_err(io::Error::from)?;
    line.push('\n');
    w.write_all(line.as_bytes())
}

/// Blocking client side of the bridge protocol.
pub struct BridgeClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: String,
}

impl BridgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BridgeError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self { reader: BufReader::new(stream), writer, partial: String::new() })
    }

    pub fn subscribe(&mut self, topic: &str) -> Result<(), BridgeError> {
        self.send(&ClientOp::Sub { topic: topic.to_string() })
    }

    pub fn publish(&mut self, topic: &str, payload: &Payload) -> Result<(), BridgeError> {
        self.send(&ClientOp::Pub { topic: topic.to_string(), kind: payload.kind(), data: payload.data() })
    }

    pub fn send(&mut self, op: &ClientOp) -> Result<(), BridgeError> {
        send_line(&mut self.writer, op)?;
        Ok(())
    }

    /// Writes raw bytes; lets tests inject protocol violations.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), BridgeError> {
        self.writer.write_all(bytes)?;
        Ok(())
    }

    /// Next server operation. `Err(Closed)` once the server hangs up.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<ServerOp, BridgeError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        loop {
            // a timed-out read keeps whatever arrived in `partial`
            match self.reader.read_line(&mut self.partial) {
                Ok(0) => return Err(BridgeError::Closed),
                Ok(_) if !self.partial.ends_with('\n') => continue,
                Ok(_) => {
                    let line = std::mem::take(&mut self.partial);
                    if line.trim().is_empty() {
                        continue;
                    }
                    return serde_json::from_str(line.trim_end())
                        .map_err(|e| BridgeError::Protocol(format!("bad server line: {e}")));
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(BridgeError::Timeout(timeout.unwrap_or_default()));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn close(self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}
