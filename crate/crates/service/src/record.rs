//! Appends every message of a set of topics to a log, one JSON envelope per
//! line, in arrival order. The subscription never drops messages.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use crate::broker::{Broker, BrokerError, QueuePolicy, RecvError, Subscription};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

pub struct Recorder {
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<io::Result<u64>>>,
}

impl Recorder {
    /// Subscribes before returning, so nothing published afterwards is missed.
    pub fn start(broker: &Broker, topics: &[&str], out: &Path) -> Result<Recorder, RecordError> {
        let sub = broker.subscribe(topics, QueuePolicy::Unbounded)?;
        let file = BufWriter::new(File::create(out)?);
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let worker = thread::Builder::new()
            .name("recorder".into())
            .spawn(move || write_loop(sub, file, flag))?;
        Ok(Recorder {
            stop,
            worker: Some(worker),
        })
    }

    /// Writes out whatever is still queued, closes the file and returns the
    /// number of recorded messages.
    pub fn finish(mut self) -> Result<u64, RecordError> {
        self.stop.store(true, Ordering::Release);
        let h = self.worker.take().expect("worker");
        Ok(h.join().map_err(|_| io::Error::other("recorder thread panicked"))??)
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

fn write_loop(sub: Subscription, mut out: BufWriter<File>, stop: Arc<AtomicBool>) -> io::Result<u64> {
    let mut n = 0;
    loop {
        match sub.recv_timeout(Duration::from_millis(20)) {
            Ok(msg) => {
                writeln!(out, "{}", msg.to_json())?;
                out.flush()?;
                n += 1;
            }
            Err(RecvError::Timeout) if stop.load(Ordering::Acquire) => break,
            Err(RecvError::Timeout) => {}
            Err(RecvError::Closed) => break,
        }
    }
    out.flush()?;
    Ok(n)
}
