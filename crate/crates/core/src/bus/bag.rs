use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::message::{Message, MessageRecord};
use crate::jsonfmt;

pub const BAG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BagError {
    #[error("bag I/O: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: timestamp {t} precedes previous record at {prev}")]
    OutOfOrder { line: usize, t: f64, prev: f64 },
    #[error("unsupported bag version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagMeta {
    pub seed: u64,
    pub scenario: String,
    pub version: u32,
}

impl BagMeta {
    pub fn new(seed: u64, scenario: impl Into<String>) -> Self {
        Self { seed, scenario: scenario.into(), version: BAG_VERSION }
    }
}

/// Append-only log of bus traffic: a metadata line followed by one JSON
/// record per message.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub meta: BagMeta,
    pub messages: Vec<Message>,
}

impl Bag {
    pub fn new(meta: BagMeta) -> Self {
        Self { meta, messages: Vec::new() }
    }

    pub fn push(&mut self, msg: Message) {
        debug_assert!(self.messages.last().is_none_or(|m| m.t <= msg.t));
        self.messages.push(msg);
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), BagError> {
        let mut w = BagWriter::new(writer, &self.meta)?;
        for m in &self.messages {
            w.append(m)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), BagError> {
        self.write_to(File::create(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self, BagError> {
        let mut lines = BufReader::new(reader).lines();
        let header = match lines.next() {
            Some(l) => l?,
            None => return Err(BagError::Malformed { line: 1, reason: "missing metadata line".into() }),
        };
        let meta: BagMeta =
            serde_json::from_str(&header).map_err(|e| BagError::Malformed { line: 1, reason: e.to_string() })?;
        if meta.version != BAG_VERSION {
            return Err(BagError::Version(meta.version));
        }
        let mut bag = Bag::new(meta);
        let mut prev = f64::NEG_INFINITY;
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MessageRecord = serde_json::from_str(&line)
                .map_err(|e| BagError::Malformed { line: line_no, reason: e.to_string() })?;
            let msg =
                Message::try_from(rec).map_err(|e| BagError::Malformed { line: line_no, reason: e.to_string() })?;
            if !msg.t.is_finite() {
                return Err(BagError::Malformed { line: line_no, reason: "non-finite timestamp".into() });
            }
            if msg.t < prev {
                return Err(BagError::OutOfOrder { line: line_no, t: msg.t, prev });
            }
            prev = msg.t;
            bag.messages.push(msg);
        }
        Ok(bag)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, BagError> {
        Self::read_from(File::open(path)?)
    }

    pub fn iter_topic<'a>(&'a self, topic: &'a str) -> impl Iterator<Item = &'a Message> + 'a {
        self.messages.iter().filter(move |m| m.topic == topic)
    }
}

/// Streaming bag output; every appended record is a complete line, so a
/// writer abandoned mid-run still leaves a readable file.
pub struct BagWriter<W: Write> {
    out: BufWriter<W>,
    last_t: f64,
}

impl BagWriter<File> {
    pub fn create(path: impl AsRef<Path>, meta: &BagMeta) -> Result<Self, BagError> {
        Self::new(File::create(path)?, meta)
    }
}

impl<W: Write> BagWriter<W> {
    pub fn new(writer: W, meta: &BagMeta) -> Result<Self, BagError> {
        let mut out = BufWriter::new(writer);
        jsonfmt::to_writer(&mut out, meta).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(Self { out, last_t: f64::NEG_INFINITY })
    }

    pub fn append(&mut self, msg: &Message) -> Result<(), BagError> {
        if msg.t < self.last_t {
            return Err(BagError::OutOfOrder { line: 0, t: msg.t, prev: self.last_t });
        }
        self.last_t = msg.t;
        jsonfmt::to_writer(&mut self.out, &msg.to_record()).map_err(io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), BagError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, BagError> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| BagError::Io(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::message::{CommandMsg, LightColor, LightMsg, Payload, PoseMsg};
    use proptest::prelude::*;

    fn sample_bag() -> Bag {
        let mut bag = Bag::new(BagMeta::new(42, "unit"));
        bag.push(Message {
            t: 0.0,
            topic: "pose".into(),
            payload: Payload::Pose(PoseMsg { id: 1, x: 0.1, y: -2.5, theta: 1.0 / 3.0 }),
        });
        bag.push(Message {
            t: 0.02,
            topic: "light".into(),
            payload: Payload::Light(LightMsg { id: 1, color: LightColor::Red, position: [3.0, 4.0] }),
        });
        bag.push(Message {
            t: 0.02,
            topic: "command".into(),
            payload: Payload::Command(CommandMsg { id: 1, delta: -0.1, u: 2.0, dt: 0.0199 }),
        });
        bag
    }

    #[test]
    fn empty_bag_round_trips() {
        let bag = Bag::new(BagMeta::new(0, "empty"));
        let bytes = bag.to_bytes();
        assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 1);
        assert_eq!(Bag::read_from(&bytes[..]).unwrap(), bag);
    }

    #[test]
    fn three_messages_round_trip() {
        let bag = sample_bag();
        let back = Bag::read_from(&bag.to_bytes()[..]).unwrap();
        assert_eq!(back, bag);
    }

    #[test]
    fn out_of_order_edit_is_rejected_with_line() {
        let text = String::from_utf8(sample_bag().to_bytes()).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        // line 4 (third record) goes back in time
        lines[3] = lines[3].replacen("\"t\":0.02", "\"t\":0.001", 1);
        let edited = lines.join("\n");
        match Bag::read_from(edited.as_bytes()) {
            Err(BagError::OutOfOrder { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected out-of-order, got {other:?}"),
        }
    }

    #[test]
    fn garbage_line_reports_line_number() {
        let mut text = String::from_utf8(sample_bag().to_bytes()).unwrap();
        text.push_str("{not json\n");
        match Bag::read_from(text.as_bytes()) {
            Err(BagError::Malformed { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.bag");
        let bag = sample_bag();
        bag.write(&path).unwrap();
        assert_eq!(Bag::read(&path).unwrap(), bag);
    }

    proptest! {
        #[test]
        fn arbitrary_sequences_round_trip(
            steps in proptest::collection::vec((0.0f64..1.0, any::<f64>(), any::<f64>(), 0u32..5), 0..50)
        ) {
            let mut bag = Bag::new(BagMeta::new(7, "prop"));
            let mut t = 0.0;
            for (dt, a, b, id) in steps {
                t += dt;
                let x = if a.is_finite() { a } else { 0.0 };
                let y = if b.is_finite() { b } else { -0.0 };
                bag.push(Message { t, topic: "pose".into(), payload: Payload::Pose(PoseMsg { id, x, y, theta: x * 1e-3 }) });
            }
            let back = Bag::read_from(&bag.to_bytes()[..]).unwrap();
            prop_assert_eq!(back, bag);
        }
    }
}
