//! TCP transport: every frame is a 4-byte big-endian length followed by a
//! UTF-8 JSON envelope `{topic, seq, t, payload}`.
//!
//! Besides regular topics a peer may send control envelopes:
//! `$subscribe` with payload `{"topics": [...], "unbounded": false}` starts
//! forwarding those topics to the peer, answered by `$subscribed`; malformed
//! input is answered with a `$error` envelope and the connection stays open.
//! Incoming messages are re-stamped with a per-connection publisher, so the
//! sequence numbers seen by subscribers are always the broker's own.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{Broker, BrokerError, Publisher, QueuePolicy, RecvError, Subscription};
use crate::messages::{
    envelope_json, now, standard_topics, Payload, PayloadKind, RawEnvelope, CONTROL_ERROR, CONTROL_SUBSCRIBE,
    CONTROL_SUBSCRIBED,
};

/// Largest accepted frame (a 512 × 424 depth frame as JSON is ~4 MB).
pub const MAX_FRAME: usize = 64 << 20;

pub fn write_frame(w: &mut impl Write, json: &str) -> io::Result<()> {
    let len = u32::try_from(json.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(json.as_bytes())?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read, max: usize) -> io::Result<Option<String>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > max {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit {max}"),
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub topics: Vec<String>,
    /// Spill instead of dropping when the peer lags (for recording).
    #[serde(default)]
    pub unbounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

/// What a single incoming envelope asked for.
pub(crate) enum Incoming {
    Published,
    Subscribe(Subscription, Vec<String>),
}

/// Decodes `json` and publishes it (or opens a subscription). Errors are
/// returned as ready-to-send `$error` envelopes.
pub(crate) fn dispatch(
    json: &str,
    broker: &Broker,
    publisher: &mut Publisher,
    queue: QueuePolicy,
) -> Result<Incoming, String> {
    let error = |message: String, topic: Option<String>| envelope_json(CONTROL_ERROR, 0, now(), &ErrorReply { message, topic });
    let env: RawEnvelope = serde_json::from_str(json).map_err(|e| error(format!("bad envelope: {e}"), None))?;
    if env.topic == CONTROL_SUBSCRIBE {
        let req: SubscribeRequest = serde_json::from_str(env.payload.get())
            .map_err(|e| error(format!("bad subscribe request: {e}"), Some(env.topic.clone())))?;
        let topics: Vec<&str> = req.topics.iter().map(String::as_str).collect();
        let policy = if req.unbounded { QueuePolicy::Unbounded } else { queue };
        let sub = broker.subscribe(&topics, policy).map_err(|e| {
            let topic = match &e {
                BrokerError::UnknownTopic(t) => Some(t.clone()),
                _ => None,
            };
            error(e.to_string(), topic)
        })?;
        return Ok(Incoming::Subscribe(sub, req.topics));
    }
    let kind = broker
        .kind(&env.topic)
        .ok_or_else(|| error(BrokerError::UnknownTopic(env.topic.clone()).to_string(), Some(env.topic.clone())))?;
    let payload = Payload::decode(kind, env.payload.get())
        .map_err(|e| error(format!("payload does not match {kind}: {e}"), Some(env.topic.clone())))?;
    publisher
        .publish(&env.topic, payload)
        .map_err(|e| error(e.to_string(), Some(env.topic.clone())))?;
    Ok(Incoming::Published)
}

pub(crate) fn subscribed_json(topics: &[String]) -> String {
    envelope_json(CONTROL_SUBSCRIBED, 0, now(), &SubscribeRequest {
        topics: topics.to_vec(),
        unbounded: false,
    })
}

/// Listening TCP endpoint bound to a broker.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    /// Binds `addr` (port 0 picks a free port) and starts accepting.
    pub fn bind(addr: impl ToSocketAddrs, broker: Broker, queue: QueuePolicy) -> io::Result<TcpServer> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new().name("tcp-accept".into()).spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::Acquire) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let broker = broker.clone();
                        let flag = flag.clone();
                        let _ = thread::Builder::new()
                            .name("tcp-conn".into())
                            .spawn(move || serve_connection(stream, broker, queue, flag));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
        Ok(TcpServer {
            addr: local,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting; open connections end when their peers disconnect
    /// or the broker shuts down.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(stream: TcpStream, broker: Broker, queue: QueuePolicy, stop: Arc<AtomicBool>) {
    let peer = stream.peer_addr().ok();
    log::debug!("client connected: {peer:?}");
    let _ = stream.set_nodelay(true);
    let writer = match stream.try_clone() {
        Ok(w) => Arc::new(Mutex::new(BufWriter::new(w))),
        Err(e) => {
            log::warn!("cannot clone client socket: {e}");
            return;
        }
    };
    let closed = Arc::new(AtomicBool::new(false));
    let mut forwarders = Vec::new();
    let mut publisher = broker.publisher();
    let mut reader = BufReader::new(stream);
    loop {
        let json = match read_frame(&mut reader, MAX_FRAME) {
            Ok(Some(j)) => j,
            Ok(None) => break,
            Err(e) => {
                log::debug!("client {peer:?} dropped: {e}");
                break;
            }
        };
        if stop.load(Ordering::Acquire) {
            break;
        }
        match dispatch(&json, &broker, &mut publisher, queue) {
            Ok(Incoming::Published) => {}
            Ok(Incoming::Subscribe(sub, topics)) => {
                let ack = subscribed_json(&topics);
                if write_frame(&mut *writer.lock().unwrap(), &ack).is_err() {
                    break;
                }
                let writer = writer.clone();
                let closed = closed.clone();
                forwarders.push(thread::spawn(move || forward(sub, writer, closed)));
            }
            Err(reply) => {
                if write_frame(&mut *writer.lock().unwrap(), &reply).is_err() {
                    break;
                }
            }
        }
    }
    closed.store(true, Ordering::Release);
    let _ = reader.get_ref().shutdown(Shutdown::Both);
    for f in forwarders {
        let _ = f.join();
    }
    log::debug!("client disconnected: {peer:?}");
}

fn forward(sub: Subscription, writer: Arc<Mutex<BufWriter<TcpStream>>>, closed: Arc<AtomicBool>) {
    while !closed.load(Ordering::Acquire) {
        match sub.recv_timeout(Duration::from_millis(50)) {
            Ok(msg) => {
                if write_frame(&mut *writer.lock().unwrap(), &msg.to_json()).is_err() {
                    break;
                }
            }
            Err(RecvError::Timeout) => {}
            Err(RecvError::Closed) => break,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("server error: {0}")]
    Server(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("malformed message from server: {0}")]
    Malformed(String),
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("connection closed")]
    Closed,
}

/// A message received by [`Client`], with its original wire text.
#[derive(Debug, Clone)]
pub struct ClientMessage {
    pub topic: String,
    pub seq: u64,
    pub t: f64,
    pub payload: Payload,
    pub json: String,
}

enum Frame {
    Message(ClientMessage),
    Subscribed,
    Error(ErrorReply),
}

/// Blocking TCP client. A background thread reads frames so sends never
/// wait on incoming traffic.
pub struct Client {
    writer: BufWriter<TcpStream>,
    frames: Receiver<Result<Frame, ClientError>>,
    seqs: HashMap<String, u64>,
    kinds: HashMap<String, PayloadKind>,
    reader: Option<JoinHandle<()>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut read_half = BufReader::new(stream.try_clone()?);
        let kinds: HashMap<String, PayloadKind> =
            standard_topics().into_iter().map(|(t, k)| (t.to_string(), k)).collect();
        let table = kinds.clone();
        let (tx, rx) = mpsc::channel();
        let reader = thread::Builder::new().name("tcp-client".into()).spawn(move || loop {
            let frame = match read_frame(&mut read_half, MAX_FRAME) {
                Ok(Some(json)) => parse_frame(json, &table),
                Ok(None) => break,
                Err(e) => Err(ClientError::Io(e)),
            };
            let stop = frame.is_err();
            if tx.send(frame).is_err() || stop {
                break;
            }
        })?;
        Ok(Client {
            writer: BufWriter::new(stream),
            frames: rx,
            seqs: HashMap::new(),
            kinds,
            reader: Some(reader),
        })
    }

    /// Subscribes and waits for the server's acknowledgement.
    pub fn subscribe(&mut self, topics: &[&str], unbounded: bool) -> Result<(), ClientError> {
        let req = SubscribeRequest {
            topics: topics.iter().map(|t| t.to_string()).collect(),
            unbounded,
        };
        write_frame(&mut self.writer, &envelope_json(CONTROL_SUBSCRIBE, 0, now(), &req))?;
        loop {
            match self.next_frame(Duration::from_secs(5))? {
                Frame::Subscribed => return Ok(()),
                Frame::Error(e) => {
                    return Err(match e.topic {
                        Some(t) if e.message.starts_with("unknown topic") => ClientError::UnknownTopic(t),
                        _ => ClientError::Server(e.message),
                    })
                }
                // messages from an earlier subscription are not expected here
                Frame::Message(_) => {}
            }
        }
    }

    pub fn publish(&mut self, topic: &str, payload: &Payload) -> Result<u64, ClientError> {
        match self.kinds.get(topic) {
            None => return Err(ClientError::UnknownTopic(topic.to_string())),
            Some(k) if *k != payload.kind() => {
                return Err(ClientError::Server(format!("topic `{topic}` carries {k} payloads")))
            }
            Some(_) => {}
        }
        let seq = self.seqs.entry(topic.to_string()).or_insert(0);
        *seq += 1;
        write_frame(&mut self.writer, &envelope_json(topic, *seq, now(), payload))?;
        Ok(*seq)
    }

    fn next_frame(&mut self, timeout: Duration) -> Result<Frame, ClientError> {
        match self.frames.recv_timeout(timeout) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => Err(ClientError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::Closed),
        }
    }

    /// Next subscribed message. Server-side errors surface as `Server`.
    pub fn recv(&mut self, timeout: Duration) -> Result<ClientMessage, ClientError> {
        loop {
            match self.next_frame(timeout)? {
                Frame::Message(m) => return Ok(m),
                Frame::Error(e) => return Err(ClientError::Server(e.message)),
                Frame::Subscribed => {}
            }
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

fn parse_frame(json: String, kinds: &HashMap<String, PayloadKind>) -> Result<Frame, ClientError> {
    let env: RawEnvelope = serde_json::from_str(&json).map_err(|e| ClientError::Malformed(e.to_string()))?;
    match env.topic.as_str() {
        CONTROL_SUBSCRIBED => Ok(Frame::Subscribed),
        CONTROL_ERROR => serde_json::from_str(env.payload.get())
            .map(Frame::Error)
            .map_err(|e| ClientError::Malformed(e.to_string())),
        topic => {
            let kind = kinds.get(topic).ok_or_else(|| ClientError::UnknownTopic(topic.to_string()))?;
            let payload =
                Payload::decode(*kind, env.payload.get()).map_err(|e| ClientError::Malformed(e.to_string()))?;
            Ok(Frame::Message(ClientMessage {
                topic: env.topic,
                seq: env.seq,
                t: env.t,
                payload,
                json,
            }))
        }
    }
}
