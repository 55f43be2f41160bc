//! The pipeline thread: consumes inputs from the broker in arrival order,
//! runs one step per skeleton and publishes the results.
//!
//! Inputs: `/skeleton`, `/depth` (the latest frame is paired with the next
//! skeleton), `/pipeline/mode`, `/calibration/command`, `/replay/status`
//! and `/gripper/state` from other publishers (manual override of the hand
//! state). Outputs: `/gripper/pose`, `/gripper/state`, `/hand_image`,
//! `/calibration/event` and `/pipeline/status`. Mode switches and profile
//! loads happen between steps, never during one.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use retarget_core::depth::{DepthFrame, HandState};
use retarget_core::skeleton::Skeleton;

use crate::broker::{Broker, BrokerError, Publisher, QueuePolicy, RecvError};
use crate::calibrator::Calibrator;
use crate::messages::{
    HandImageMsg, MapMode, ModeRequest, Payload, PipelineStatus, ReplayStatus, StateMsg, CALIBRATION_COMMAND,
    CALIBRATION_EVENT, DEPTH, GRIPPER_POSE, GRIPPER_STATE, HAND_IMAGE, PIPELINE_MODE, PIPELINE_STATUS,
    REPLAY_STATUS, SKELETON,
};
use crate::pipeline::Pipeline;

/// Step timing, measured around [`Pipeline::step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub steps: u64,
    pub errors: u64,
    pub total: Duration,
    pub max: Duration,
}

impl StepStats {
    pub fn mean(&self) -> Duration {
        if self.steps == 0 {
            Duration::ZERO
        } else {
            self.total / self.steps as u32
        }
    }
}

pub struct Service {
    broker: Broker,
    stats: Arc<Mutex<StepStats>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

struct Worker {
    pipeline: Pipeline,
    calibrator: Calibrator,
    out: Publisher,
    pending_depth: Option<Arc<DepthFrame>>,
    frames: u64,
    stats: Arc<Mutex<StepStats>>,
}

impl Service {
    /// Subscribes to the inputs (before returning, so nothing published
    /// afterwards is missed) and starts the pipeline thread.
    pub fn start(broker: &Broker, pipeline: Pipeline, calibrator: Calibrator) -> Result<Service, BrokerError> {
        let inbox = broker.subscribe(
            &[SKELETON, DEPTH, PIPELINE_MODE, CALIBRATION_COMMAND, REPLAY_STATUS, GRIPPER_STATE],
            QueuePolicy::Unbounded,
        )?;
        let stats = Arc::new(Mutex::new(StepStats::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let mut w = Worker {
            pipeline,
            calibrator,
            out: broker.publisher(),
            pending_depth: None,
            frames: 0,
            stats: stats.clone(),
        };
        w.status(PipelineStatus::Mode {
            mode: w.pipeline.mode(),
            profile_user: w.pipeline.profile().map(|p| p.user.clone()),
        });
        let flag = stop.clone();
        let worker = thread::Builder::new()
            .name("pipeline".into())
            .spawn(move || {
                let own = w.out.id();
                loop {
                    match inbox.recv_timeout(Duration::from_millis(50)) {
                        Ok(msg) => {
                            if msg.publisher != own {
                                w.handle(&msg.payload);
                            }
                        }
                        Err(RecvError::Timeout) if flag.load(Ordering::Acquire) => break,
                        Err(RecvError::Timeout) => {}
                        Err(RecvError::Closed) => break,
                    }
                }
            })
            .expect("spawn pipeline thread");
        Ok(Service {
            broker: broker.clone(),
            stats,
            stop,
            worker: Some(worker),
        })
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn stats(&self) -> StepStats {
        *self.stats.lock().unwrap()
    }

    /// Processes what is already queued, then stops the thread.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the pipeline thread ends (broker shutdown).
    pub fn join(mut self) {
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}

impl Worker {
    fn publish(&mut self, topic: &str, payload: Payload) {
        if let Err(e) = self.out.publish(topic, payload) {
            log::warn!("publishing on {topic} failed: {e}");
        }
    }

    fn status(&mut self, s: PipelineStatus) {
        self.publish(PIPELINE_STATUS, Payload::PipelineStatus(s));
    }

    fn handle(&mut self, payload: &Payload) {
        match payload {
            Payload::Skeleton(s) => self.on_skeleton(s),
            Payload::Depth(d) => self.pending_depth = Some(d.frame.clone()),
            Payload::PipelineMode(req) => self.on_mode(req),
            Payload::CalibrationCommand(cmd) => {
                let out = self.calibrator.command(cmd);
                for e in out.events {
                    self.publish(CALIBRATION_EVENT, Payload::CalibrationEvent(e));
                }
            }
            Payload::ReplayStatus(ReplayStatus::EndOfStream { .. }) => {
                let frames = self.frames;
                self.status(PipelineStatus::Drained { frames });
            }
            Payload::GripperState(s) => self.pipeline.set_hand_state(HandState {
                state: s.state,
                confidence: s.confidence,
            }),
            other => log::debug!("pipeline ignores {:?} payloads", other.kind()),
        }
    }

    fn on_skeleton(&mut self, s: &Skeleton) {
        self.frames += 1;
        if self.calibrator.is_active() {
            let out = self.calibrator.on_skeleton(s);
            for e in out.events {
                self.publish(CALIBRATION_EVENT, Payload::CalibrationEvent(e));
            }
            if let Some((profile, path)) = out.accepted {
                let user = profile.user.clone();
                match self.pipeline.set_profile(profile).and_then(|_| self.pipeline.set_mode(MapMode::Tps)) {
                    Ok(()) => {
                        log::info!("calibration accepted for {user}, profile at {}", path.display());
                        self.status(PipelineStatus::Mode {
                            mode: MapMode::Tps,
                            profile_user: Some(user),
                        });
                    }
                    Err(e) => self.status(PipelineStatus::ModeRejected {
                        requested: MapMode::Tps,
                        reason: e.to_string(),
                    }),
                }
            }
        }

        let depth = self.pending_depth.take();
        let started = Instant::now();
        let result = self.pipeline.step(s, depth.as_deref());
        let took = started.elapsed();
        {
            let mut st = self.stats.lock().unwrap();
            st.steps += 1;
            st.total += took;
            st.max = st.max.max(took);
            if result.is_err() {
                st.errors += 1;
            }
        }
        match result {
            Ok(out) => {
                if let Some(img) = &out.hand_image {
                    self.publish(HAND_IMAGE, Payload::HandImage(HandImageMsg::new(s.timestamp, img)));
                }
                if let Some(e) = &out.state_error {
                    log::debug!("state path: {e}");
                }
                if let Some(pose) = out.pose {
                    self.publish(GRIPPER_POSE, Payload::GripperPose(pose));
                }
                self.publish(GRIPPER_STATE, Payload::GripperState(StateMsg::new(s.timestamp, out.hand)));
            }
            Err(e) => {
                log::debug!("position path: {e}");
                let hand = self.pipeline.hand_state();
                self.publish(GRIPPER_STATE, Payload::GripperState(StateMsg::new(s.timestamp, hand)));
            }
        }
    }

    fn on_mode(&mut self, req: &ModeRequest) {
        let result = match &req.profile {
            Some(p) => self.pipeline.load_profile(Path::new(p)),
            None => Ok(()),
        }
        .and_then(|_| self.pipeline.set_mode(req.mode));
        let status = match result {
            Ok(()) => PipelineStatus::Mode {
                mode: self.pipeline.mode(),
                profile_user: self.pipeline.profile().map(|p| p.user.clone()),
            },
            Err(e) => PipelineStatus::ModeRejected {
                requested: req.mode,
                reason: e.to_string(),
            },
        };
        self.status(status);
    }
}

/// Runs `records` through a fresh in-process service and returns, in
/// publish order, every message on `topics` emitted before the pipeline
/// reported the end of the stream.
pub fn replay_local(
    pipeline: Pipeline,
    calibrator: Calibrator,
    records: &[Skeleton],
    pacing: crate::replay::Pacing,
    topics: &[&str],
) -> Result<(Vec<Arc<crate::messages::Message>>, StepStats), crate::replay::ReplayError> {
    use crate::replay::ReplayError;
    let broker = Broker::new();
    let mut listen: Vec<&str> = topics.to_vec();
    listen.push(PIPELINE_STATUS);
    let sub = broker
        .subscribe(&listen, QueuePolicy::Unbounded)
        .map_err(|e| ReplayError::Publish(e.to_string()))?;
    let mut service = Service::start(&broker, pipeline, calibrator).map_err(|e| ReplayError::Publish(e.to_string()))?;
    let mut publisher = broker.publisher();
    crate::replay::replay(records, pacing, &mut publisher)?;
    let mut out = Vec::new();
    loop {
        let msg = sub
            .recv_timeout(Duration::from_secs(60))
            .map_err(|e| ReplayError::Publish(format!("pipeline did not drain: {e:?}")))?;
        if let Payload::PipelineStatus(PipelineStatus::Drained { .. }) = msg.payload {
            break;
        }
        if topics.contains(&&*msg.topic) {
            out.push(msg);
        }
    }
    service.stop();
    let stats = service.stats();
    Ok((out, stats))
}
