//! In-process publish/subscribe broker.
//!
//! Topics are registered with a payload type; publishing checks the type and
//! fans the message out to every current subscriber queue. Each subscriber
//! owns a queue that is either bounded (oldest messages dropped and counted
//! when a slow consumer falls behind) or unbounded (used for recording and
//! for the pipeline inbox, where nothing may be lost).

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::messages::{now, standard_topics, Message, Payload, PayloadKind, PublisherId};

/// Default bounded queue depth.
pub const DEFAULT_QUEUE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` carries {expected} payloads, got {got}")]
    TypeMismatch {
        topic: String,
        expected: PayloadKind,
        got: PayloadKind,
    },
    #[error("broker is shut down")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueuePolicy {
    /// Keeps at most this many messages, discarding the oldest.
    DropOldest(usize),
    Unbounded,
}

impl Default for QueuePolicy {
    fn default() -> Self {
        QueuePolicy::DropOldest(DEFAULT_QUEUE)
    }
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Arc<Message>>,
    dropped: u64,
    closed: bool,
}

struct Queue {
    policy: QueuePolicy,
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl Queue {
    fn push(&self, msg: Arc<Message>) -> bool {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return false;
        }
        if let QueuePolicy::DropOldest(cap) = self.policy {
            while st.items.len() >= cap.max(1) {
                st.items.pop_front();
                st.dropped += 1;
            }
        }
        st.items.push_back(msg);
        drop(st);
        self.ready.notify_one();
        true
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

struct TopicEntry {
    kind: PayloadKind,
    subscribers: Vec<(u64, Arc<Queue>)>,
}

struct Inner {
    topics: RwLock<HashMap<String, TopicEntry>>,
    next_id: AtomicU64,
    dropped: AtomicU64,
    closed: AtomicBool,
}

/// Cheaply cloneable handle to a shared broker.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new()
    }
}

impl Broker {
    /// Broker with the standard topic table registered.
    pub fn new() -> Broker {
        let broker = Broker::empty();
        for (topic, kind) in standard_topics() {
            broker.register(topic, kind).expect("standard topics are distinct");
        }
        broker
    }

    pub fn empty() -> Broker {
        Broker {
            inner: Arc::new(Inner {
                topics: RwLock::new(HashMap::new()),
                next_id: AtomicU64::new(1),
                dropped: AtomicU64::new(0),
                closed: AtomicBool::new(false),
            }),
        }
    }

    /// Registers `topic`; re-registering with the same type is a no-op.
    pub fn register(&self, topic: &str, kind: PayloadKind) -> Result<(), BrokerError> {
        let mut topics = self.inner.topics.write().unwrap();
        match topics.get(topic) {
            Some(e) if e.kind != kind => Err(BrokerError::TypeMismatch {
                topic: topic.to_string(),
                expected: e.kind,
                got: kind,
            }),
            Some(_) => Ok(()),
            None => {
                topics.insert(
                    topic.to_string(),
                    TopicEntry {
                        kind,
                        subscribers: Vec::new(),
                    },
                );
                Ok(())
            }
        }
    }

    pub fn kind(&self, topic: &str) -> Option<PayloadKind> {
        self.inner.topics.read().unwrap().get(topic).map(|e| e.kind)
    }

    pub fn topics(&self) -> Vec<String> {
        let mut t: Vec<String> = self.inner.topics.read().unwrap().keys().cloned().collect();
        t.sort();
        t
    }

    fn next_id(&self) -> u64 {
        self.inner.next_id.fetch_add(1, Ordering::Relaxed)
    }

    /// New publishing handle with its own sequence counters.
    pub fn publisher(&self) -> Publisher {
        Publisher {
            broker: self.clone(),
            id: self.next_id(),
            seqs: HashMap::new(),
        }
    }

    /// One queue receiving every listed topic, in publish order.
    pub fn subscribe(&self, topics: &[&str], policy: QueuePolicy) -> Result<Subscription, BrokerError> {
        if self.inner.closed.load(Ordering::Acquire) {
            return Err(BrokerError::Closed);
        }
        let mut table = self.inner.topics.write().unwrap();
        if let Some(missing) = topics.iter().find(|t| !table.contains_key(**t)) {
            return Err(BrokerError::UnknownTopic(missing.to_string()));
        }
        let id = self.next_id();
        let queue = Arc::new(Queue {
            policy,
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
        });
        let mut names: Vec<String> = topics.iter().map(|t| t.to_string()).collect();
        names.sort();
        names.dedup();
        for t in &names {
            table.get_mut(t).expect("checked").subscribers.push((id, queue.clone()));
        }
        Ok(Subscription {
            broker: self.clone(),
            id,
            topics: names,
            queue,
        })
    }

    fn unsubscribe(&self, id: u64, topics: &[String]) {
        let mut table = self.inner.topics.write().unwrap();
        for t in topics {
            if let Some(e) = table.get_mut(t) {
                e.subscribers.retain(|(sid, _)| *sid != id);
            }
        }
    }

    fn deliver(&self, msg: Message) -> Result<(), BrokerError> {
        let table = self.inner.topics.read().unwrap();
        let entry = table
            .get(&*msg.topic)
            .ok_or_else(|| BrokerError::UnknownTopic(msg.topic.to_string()))?;
        let got = msg.payload.kind();
        if got != entry.kind {
            return Err(BrokerError::TypeMismatch {
                topic: msg.topic.to_string(),
                expected: entry.kind,
                got,
            });
        }
        let msg = Arc::new(msg);
        for (_, q) in &entry.subscribers {
            let before = q.state.lock().unwrap().dropped;
            q.push(msg.clone());
            let after = q.state.lock().unwrap().dropped;
            if after > before {
                self.inner.dropped.fetch_add(after - before, Ordering::Relaxed);
            }
        }
        Ok(())
    }

    /// Messages discarded across all bounded queues so far.
    pub fn dropped_total(&self) -> u64 {
        self.inner.dropped.load(Ordering::Relaxed)
    }

    /// Closes every queue; blocked receivers return `None`.
    pub fn shutdown(&self) {
        self.inner.closed.store(true, Ordering::Release);
        let table = self.inner.topics.read().unwrap();
        for e in table.values() {
            for (_, q) in &e.subscribers {
                q.close();
            }
        }
    }

    pub fn is_shut_down(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }
}

/// Publishing handle. Sequence numbers start at 1 and increase by one per
/// message on each topic.
pub struct Publisher {
    broker: Broker,
    id: PublisherId,
    seqs: HashMap<String, u64>,
}

impl Publisher {
    pub fn id(&self) -> PublisherId {
        self.id
    }

    pub fn publish(&mut self, topic: &str, payload: Payload) -> Result<u64, BrokerError> {
        if self.broker.is_shut_down() {
            return Err(BrokerError::Closed);
        }
        let expected = self
            .broker
            .kind(topic)
            .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
        if payload.kind() != expected {
            return Err(BrokerError::TypeMismatch {
                topic: topic.to_string(),
                expected,
                got: payload.kind(),
            });
        }
        let seq = self.seqs.entry(topic.to_string()).or_insert(0);
        *seq += 1;
        self.broker.deliver(Message {
            topic: topic.into(),
            seq: *seq,
            t: now(),
            payload,
            publisher: self.id,
        })?;
        Ok(*seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecvError {
    Timeout,
    Closed,
}

/// Receiving end of a subscription. Dropping it unsubscribes.
pub struct Subscription {
    broker: Broker,
    id: u64,
    topics: Vec<String>,
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    /// Blocks until a message arrives; `None` once the broker shut down and
    /// the queue is drained.
    pub fn recv(&self) -> Option<Arc<Message>> {
        let mut st = self.queue.state.lock().unwrap();
        loop {
            if let Some(m) = st.items.pop_front() {
                return Some(m);
            }
            if st.closed {
                return None;
            }
            st = self.queue.ready.wait(st).unwrap();
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Arc<Message>, RecvError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.queue.state.lock().unwrap();
        loop {
            if let Some(m) = st.items.pop_front() {
                return Ok(m);
            }
            if st.closed {
                return Err(RecvError::Closed);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(RecvError::Timeout);
            }
            st = self.queue.ready.wait_timeout(st, left).unwrap().0;
        }
    }

    pub fn try_recv(&self) -> Option<Arc<Message>> {
        self.queue.state.lock().unwrap().items.pop_front()
    }

    /// Messages discarded from this queue because the consumer lagged.
    pub fn dropped(&self) -> u64 {
        self.queue.state.lock().unwrap().dropped
    }

    pub fn pending(&self) -> usize {
        self.queue.state.lock().unwrap().items.len()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.broker.unsubscribe(self.id, &self.topics);
    }
}
