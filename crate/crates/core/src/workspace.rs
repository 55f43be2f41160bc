//! Semi-cylindrical robot workspace, target clamping and gripper trajectory
//! analysis.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{GripState, Vec3};

/// Boundary tolerance used by [`WorkspaceModel::contains`].
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkspaceError {
    #[error("invalid workspace: {0}")]
    InvalidModel(String),
    #[error("point lies on the vertical axis; snapped to {snapped:?}")]
    DegenerateAxisPoint { snapped: Vec3 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { got: usize, needed: usize },
    #[error("sampling interval varies by {jitter:.1}% (limit 10%)")]
    NonUniformRate { jitter: f64 },
    #[error("timestamps must be strictly increasing (sample {0})")]
    NonMonotonic(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Region `r ∈ [r_min, r_max]`, `z ∈ [z_min, z_max]`, azimuth within
/// `[theta_min, theta_max]` (radians, measured with `atan2(y, x)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorkspace", into = "RawWorkspace")]
pub struct WorkspaceModel {
    r_min: f64,
    r_max: f64,
    z_min: f64,
    z_max: f64,
    theta_min: f64,
    theta_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWorkspace {
    r_min: f64,
    r_max: f64,
    z_min: f64,
    z_max: f64,
    theta_min_deg: f64,
    theta_max_deg: f64,
}

impl TryFrom<RawWorkspace> for WorkspaceModel {
    type Error = WorkspaceError;

    fn try_from(r: RawWorkspace) -> Result<Self, WorkspaceError> {
        WorkspaceModel::new(
            (r.r_min, r.r_max),
            (r.z_min, r.z_max),
            (r.theta_min_deg.to_radians(), r.theta_max_deg.to_radians()),
        )
    }
}

impl From<WorkspaceModel> for RawWorkspace {
    fn from(m: WorkspaceModel) -> Self {
        RawWorkspace {
            r_min: m.r_min,
            r_max: m.r_max,
            z_min: m.z_min,
            z_max: m.z_max,
            theta_min_deg: m.theta_min.to_degrees(),
            theta_max_deg: m.theta_max.to_degrees(),
        }
    }
}

impl Default for WorkspaceModel {
    fn default() -> Self {
        WorkspaceModel::new((0.15, 0.45), (0.10, 0.55), (-PI / 2.0, PI / 2.0)).unwrap()
    }
}

impl WorkspaceModel {
    pub fn new(radius: (f64, f64), height: (f64, f64), sector: (f64, f64)) -> Result<Self, WorkspaceError> {
        let all = [radius.0, radius.1, height.0, height.1, sector.0, sector.1];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(WorkspaceError::InvalidModel("non-finite bound".into()));
        }
        if !(radius.0 >= 0.0 && radius.0 < radius.1) {
            return Err(WorkspaceError::InvalidModel(format!("radial range {radius:?}")));
        }
        if height.0 >= height.1 {
            return Err(WorkspaceError::InvalidModel(format!("height range {height:?}")));
        }
        let width = sector.1 - sector.0;
        if !(width > 0.0 && width <= TAU + 1e-12) {
            return Err(WorkspaceError::InvalidModel(format!("sector width {} deg", width.to_degrees())));
        }
        Ok(WorkspaceModel {
            r_min: radius.0,
            r_max: radius.1,
            z_min: height.0,
            z_max: height.1,
            theta_min: sector.0,
            theta_max: sector.1,
        })
    }

    pub fn radius(&self) -> (f64, f64) {
        (self.r_min, self.r_max)
    }

    pub fn height(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }

    pub fn sector(&self) -> (f64, f64) {
        (self.theta_min, self.theta_max)
    }

    fn sector_width(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    /// Point at mid radius, mid height and mid angle.
    pub fn center(&self) -> Vec3 {
        self.cylindrical(
            0.5 * (self.r_min + self.r_max),
            0.5 * (self.theta_min + self.theta_max),
            0.5 * (self.z_min + self.z_max),
        )
    }

    pub fn cylindrical(&self, r: f64, theta: f64, z: f64) -> Vec3 {
        Vec3::new(r * theta.cos(), r * theta.sin(), z)
    }

    /// Angle offset from `theta_min` folded into `[0, 2π)`.
    fn relative_angle(&self, theta: f64) -> f64 {
        (theta - self.theta_min).rem_euclid(TAU)
    }

    fn angle_inside(&self, p: &Vec3) -> bool {
        if p.x.hypot(p.y) < BOUNDARY_TOL {
            return true;
        }
        let rel = self.relative_angle(p.y.atan2(p.x));
        rel <= self.sector_width() + BOUNDARY_TOL || rel >= TAU - BOUNDARY_TOL
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        if !p.iter().all(|c| c.is_finite()) {
            return false;
        }
        let r = p.x.hypot(p.y);
        r >= self.r_min - BOUNDARY_TOL
            && r <= self.r_max + BOUNDARY_TOL
            && p.z >= self.z_min - BOUNDARY_TOL
            && p.z <= self.z_max + BOUNDARY_TOL
            && self.angle_inside(p)
    }

    fn clamp_angle(&self, theta: f64) -> f64 {
        let rel = self.relative_angle(theta);
        let over = rel - self.sector_width();
        let under = TAU - rel;
        if over <= under {
            self.theta_max
        } else {
            self.theta_min
        }
    }

    /// Clamps radius, height and azimuth independently. Points already
    /// inside are returned untouched.
    pub fn project(&self, p: &Vec3) -> Result<Vec3, WorkspaceError> {
        if self.contains(p) {
            return Ok(*p);
        }
        let z = p.z.clamp(self.z_min, self.z_max);
        let r = p.x.hypot(p.y);
        if r < BOUNDARY_TOL {
            if self.r_min > 0.0 {
                let mid = 0.5 * (self.theta_min + self.theta_max);
                return Err(WorkspaceError::DegenerateAxisPoint {
                    snapped: self.cylindrical(self.r_min, mid, z),
                });
            }
            return Ok(Vec3::new(p.x, p.y, z));
        }
        let rc = r.clamp(self.r_min, self.r_max);
        if self.angle_inside(p) {
            let s = rc / r;
            Ok(Vec3::new(p.x * s, p.y * s, z))
        } else {
            Ok(self.cylindrical(rc, self.clamp_angle(p.y.atan2(p.x)), z))
        }
    }

    /// [`project`](Self::project), snapping axis points to the sector midpoint.
    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        match self.project(p) {
            Ok(q) => q,
            Err(WorkspaceError::DegenerateAxisPoint { snapped }) => snapped,
            Err(_) => unreachable!("project only fails on axis points"),
        }
    }
}

/// Gripper target in the robot base frame. Orientation is always pointing down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperPose {
    #[serde(with = "vec3_array")]
    pub pos: Vec3,
    pub state: GripState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    #[serde(with = "vec3_array")]
    pub pos: Vec3,
    pub state: GripState,
}

/// Gripper samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self, WorkspaceError> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t.partial_cmp(&pair[0].t) != Some(std::cmp::Ordering::Greater) {
                return Err(WorkspaceError::NonMonotonic(i + 1));
            }
        }
        Ok(Trajectory { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomicMovement {
    Translation {
        start_t: f64,
        end_t: f64,
        #[serde(with = "vec3_array")]
        start: Vec3,
        #[serde(with = "vec3_array")]
        end: Vec3,
    },
    GripperToggle {
        t: f64,
        to: GripState,
    },
}

impl AtomicMovement {
    pub fn start_time(&self) -> f64 {
        match *self {
            AtomicMovement::Translation { start_t, .. } => start_t,
            AtomicMovement::GripperToggle { t, .. } => t,
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            AtomicMovement::Translation { start_t, end_t, .. } => end_t - start_t,
            AtomicMovement::GripperToggle { .. } => 0.0,
        }
    }
}

/// Splits a trajectory into translations and gripper toggles.
///
/// An interval between two samples is moving when its finite-difference
/// speed exceeds `v_stop`. Moving runs separated by rests shorter than
/// `dwell` seconds merge into one translation.
pub fn segment_atomic(t: &Trajectory, v_stop: f64, dwell: f64) -> Result<Vec<AtomicMovement>, WorkspaceError> {
    let s = t.samples();
    if s.len() < 2 {
        return Err(WorkspaceError::TooFewSamples { got: s.len(), needed: 2 });
    }
    if !(v_stop > 0.0 && v_stop.is_finite()) {
        return Err(WorkspaceError::InvalidParameter("v_stop must be positive"));
    }
    if !(dwell > 0.0 && dwell.is_finite()) {
        return Err(WorkspaceError::InvalidParameter("dwell must be positive"));
    }

    // Runs of moving intervals as (first sample, last sample).
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (k, pair) in s.windows(2).enumerate() {
        let speed = (pair[1].pos - pair[0].pos).norm() / (pair[1].t - pair[0].t);
        if speed <= v_stop {
            continue;
        }
        match runs.last_mut() {
            Some(run) if run.1 == k => run.1 = k + 1,
            Some(run) if s[k].t - s[run.1].t < dwell => run.1 = k + 1,
            _ => runs.push((k, k + 1)),
        }
    }

    let mut out: Vec<AtomicMovement> = runs
        .into_iter()
        .map(|(a, b)| AtomicMovement::Translation {
            start_t: s[a].t,
            end_t: s[b].t,
            start: s[a].pos,
            end: s[b].pos,
        })
        .collect();
    out.extend(
        s.windows(2)
            .filter(|pair| pair[0].state != pair[1].state)
            .map(|pair| AtomicMovement::GripperToggle {
                t: pair[1].t,
                to: pair[1].state,
            }),
    );
    out.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()));
    Ok(out)
}

/// Root-mean-square magnitude of the third finite difference of position
/// (m/s³). Requires a uniform sampling rate.
pub fn smoothness_metric(t: &Trajectory) -> Result<f64, WorkspaceError> {
    let s = t.samples();
    if s.len() < 4 {
        return Err(WorkspaceError::TooFewSamples { got: s.len(), needed: 4 });
    }
    let dts: Vec<f64> = s.windows(2).map(|p| p[1].t - p[0].t).collect();
    let dt = dts.iter().sum::<f64>() / dts.len() as f64;
    let jitter = dts.iter().map(|d| (d - dt).abs()).fold(0.0, f64::max) / dt;
    if jitter > 0.1 {
        return Err(WorkspaceError::NonUniformRate { jitter: jitter * 100.0 });
    }
    let sum_sq: f64 = s
        .windows(4)
        .map(|w| {
            let jerk = (w[3].pos - 3.0 * w[2].pos + 3.0 * w[1].pos - w[0].pos) / dt.powi(3);
            jerk.norm_squared()
        })
        .sum();
    Ok((sum_sq / (s.len() - 3) as f64).sqrt())
}

#[derive(Debug, Error)]
pub enum TrajectoryLogError {
    #[error("malformed trajectory log at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads `{"t": .., "pos": [x, y, z], "state": "open"|"closed"}` lines.
pub fn read_trajectory_log(reader: impl BufRead) -> Result<Trajectory, TrajectoryLogError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: TrajectorySample = serde_json::from_str(&line).map_err(|e| TrajectoryLogError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        samples.push(sample);
    }
    Trajectory::new(samples).map_err(|e| TrajectoryLogError::Malformed {
        line: 0,
        reason: e.to_string(),
    })
}

pub fn write_trajectory_log(mut writer: impl Write, t: &Trajectory) -> std::io::Result<()> {
    for s in t.samples() {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub(crate) mod vec3_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::Vec3;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        <[f64; 3]>::deserialize(d).map(Vec3::from)
    }
}
