//! Trajectory analysis for `retarget analyze`.

use std::fs;
use std::path::Path;

use retarget_core::workspace::{
    read_trajectory_log, segment_atomic, smoothness_metric, AtomicMovement, Trajectory, TrajectorySample,
    WorkspaceError,
};
use serde::Serialize;
use thiserror::Error;

use crate::messages::{PoseMsg, RawEnvelope, GRIPPER_POSE};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

/// Reads either a trajectory log (`{t, pos, state}` lines) or a recording
/// of `/gripper/pose` envelopes (other topics are skipped).
pub fn load_trajectory(path: &Path) -> Result<Trajectory, AnalysisError> {
    let text = fs::read_to_string(path).map_err(|e| AnalysisError::Io(path.display().to_string(), e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if !first.contains("\"topic\"") {
        return read_trajectory_log(text.as_bytes()).map_err(|e| AnalysisError::Malformed(e.to_string()));
    }
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| AnalysisError::Malformed(format!("line {}: {e}", i + 1));
        let env: RawEnvelope = serde_json::from_str(line).map_err(bad)?;
        if env.topic != GRIPPER_POSE {
            continue;
        }
        let pose: PoseMsg = serde_json::from_str(env.payload.get()).map_err(bad)?;
        samples.push(TrajectorySample {
            t: pose.t,
            pos: pose.pos,
            state: pose.state,
        });
    }
    Ok(Trajectory::new(samples)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub samples: usize,
    pub atomic_movements: usize,
    pub movements: Vec<AtomicMovement>,
    /// RMS jerk (m/s³); absent for trajectories shorter than four samples.
    pub smoothness: Option<f64>,
}

pub fn analyze(t: &Trajectory, v_stop: f64, dwell: f64) -> Result<AnalysisReport, AnalysisError> {
    let movements = segment_atomic(t, v_stop, dwell)?;
    let smoothness = match smoothness_metric(t) {
        Ok(v) => Some(v),
        Err(WorkspaceError::TooFewSamples { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(AnalysisReport {
        samples: t.len(),
        atomic_movements: movements.len(),
        movements,
        smoothness,
    })
}
