//! Replaying skeleton logs onto `/skeleton`.
//!
//! Two input formats are accepted line by line: plain skeleton records and
//! recorded envelopes (as written by [`crate::record`]); from the latter only
//! `/skeleton` messages are replayed. The whole log is parsed before the first
//! message goes out, so a corrupt line never produces a partial replay.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use retarget_core::skeleton::{parse_skeleton_record, LengthUnit, LogError, Skeleton};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::broker::Publisher;
use crate::messages::{Payload, RawEnvelope, ReplayStatus, REPLAY_STATUS, SKELETON};
use crate::transport::Client;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("publish failed: {0}")]
    Publish(String),
}

/// Peeks at the top-level keys to tell envelopes from skeleton records.
fn is_envelope(text: &str) -> bool {
    #[derive(serde::Deserialize)]
    struct Probe<'a> {
        #[serde(borrow)]
        topic: Option<&'a RawValue>,
    }
    serde_json::from_str::<Probe>(text).is_ok_and(|p| p.topic.is_some())
}

pub fn parse_replay_log(reader: impl BufRead, unit: LengthUnit) -> Result<Vec<Skeleton>, ReplayError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if is_envelope(&line) {
            let env: RawEnvelope = serde_json::from_str(&line).map_err(|e| ReplayError::MalformedLog {
                line: n,
                reason: e.to_string(),
            })?;
            if env.topic != SKELETON {
                continue;
            }
            out.push(parse_record(env.payload.get(), n, unit)?);
        } else {
            out.push(parse_record(&line, n, unit)?);
        }
    }
    Ok(out)
}

fn parse_record(text: &str, line: usize, unit: LengthUnit) -> Result<Skeleton, ReplayError> {
    parse_skeleton_record(text, line, unit).map_err(|e| match e {
        LogError::Malformed { line, reason } => ReplayError::MalformedLog { line, reason },
        LogError::Io(e) => ReplayError::Io(e),
    })
}

pub fn load_replay_log(path: &Path, unit: LengthUnit) -> Result<Vec<Skeleton>, ReplayError> {
    parse_replay_log(BufReader::new(File::open(path)?), unit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Record `k` goes out at `start + k / rate`.
    Rate(f64),
    AsFastAsPossible,
}

/// Destination of replayed messages.
pub trait Sink {
    fn send(&mut self, topic: &str, payload: Payload) -> Result<(), String>;
}

impl Sink for Publisher {
    fn send(&mut self, topic: &str, payload: Payload) -> Result<(), String> {
        self.publish(topic, payload).map(|_| ()).map_err(|e| e.to_string())
    }
}

impl Sink for Client {
    fn send(&mut self, topic: &str, payload: Payload) -> Result<(), String> {
        self.publish(topic, &payload).map(|_| ()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayReport {
    pub records: usize,
    pub elapsed: Duration,
}

/// Publishes `records` on `/skeleton`, then an end-of-stream marker on
/// `/replay/status` (at `start + n / rate` when paced).
pub fn replay(records: &[Skeleton], pacing: Pacing, sink: &mut dyn Sink) -> Result<ReplayReport, ReplayError> {
    if let Pacing::Rate(r) = pacing {
        if !(r > 0.0 && r.is_finite()) {
            return Err(ReplayError::Publish(format!("invalid rate {r}")));
        }
    }
    let start = Instant::now();
    let wait_until = |k: usize| {
        if let Pacing::Rate(rate) = pacing {
            let due = start + Duration::from_secs_f64(k as f64 / rate);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    };
    for (k, s) in records.iter().enumerate() {
        wait_until(k);
        sink.send(SKELETON, Payload::Skeleton(s.clone()))
            .map_err(ReplayError::Publish)?;
    }
    wait_until(records.len());
    sink.send(
        REPLAY_STATUS,
        Payload::ReplayStatus(ReplayStatus::EndOfStream { records: records.len() }),
    )
    .map_err(ReplayError::Publish)?;
    Ok(ReplayReport {
        records: records.len(),
        elapsed: start.elapsed(),
    })
}
