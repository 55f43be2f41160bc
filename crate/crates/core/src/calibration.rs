//! Per-user calibration: 16 keypose correspondences collected from the
//! skeleton stream, checked for spatial consistency and turned into a
//! thin-plate-spline pose map.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose_map::{tps_fit, PoseMapError, TpsParams};
use crate::skeleton::{median_skeleton, shoulder_frame_arm, ArmVector, Skeleton, SkeletonError};
use crate::workspace::WorkspaceModel;
use crate::Vec3;

pub const KEYPOSE_COUNT: usize = 16;
pub const POSES_PER_LEVEL: usize = 8;
pub const PROFILE_VERSION: u32 = 1;
pub const PROFILE_EXTENSION: &str = "rtkprofile";

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid keypose geometry: {0}")]
    InvalidGeometry(String),
    #[error("need {needed} samples for the sampling window, got {got}")]
    InsufficientSamples { got: usize, needed: usize },
    #[error("session is not collecting")]
    NotCollecting,
    #[error("session has not finished all keyposes")]
    Incomplete,
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("calibration rejected: {}", format_issues(.0))]
    QualityRejected(Vec<QualityIssue>),
    #[error("spline fit failed, repeat the calibration: {0}")]
    Fit(#[from] PoseMapError),
    #[error("malformed profile: {0}")]
    MalformedProfile(String),
    #[error("profile i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn format_issues(issues: &[QualityIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Robot-frame targets: the first eight on the lower level, the last eight
/// on the upper one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKeyposes", into = "RawKeyposes")]
pub struct KeyposeSet {
    targets: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct RawKeyposes {
    targets: Vec<[f64; 3]>,
}

impl TryFrom<RawKeyposes> for KeyposeSet {
    type Error = CalibrationError;

    fn try_from(r: RawKeyposes) -> Result<Self, CalibrationError> {
        KeyposeSet::new(r.targets.into_iter().map(Vec3::from).collect())
    }
}

impl From<KeyposeSet> for RawKeyposes {
    fn from(k: KeyposeSet) -> Self {
        RawKeyposes {
            targets: k.targets.iter().map(|t| (*t).into()).collect(),
        }
    }
}

impl KeyposeSet {
    pub fn new(targets: Vec<Vec3>) -> Result<Self, CalibrationError> {
        if targets.len() != KEYPOSE_COUNT {
            return Err(CalibrationError::InvalidGeometry(format!(
                "expected {KEYPOSE_COUNT} keyposes, got {}",
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.iter().all(|c| c.is_finite())) {
            return Err(CalibrationError::InvalidGeometry("non-finite keypose".into()));
        }
        Ok(KeyposeSet { targets })
    }

    pub fn targets(&self) -> &[Vec3] {
        &self.targets
    }

    /// 0 for the lower level, 1 for the upper.
    pub fn level(index: usize) -> usize {
        index / POSES_PER_LEVEL
    }

    /// Indices of targets outside `workspace`.
    pub fn outside(&self, workspace: &WorkspaceModel) -> Vec<usize> {
        (0..KEYPOSE_COUNT).filter(|&i| !workspace.contains(&self.targets[i])).collect()
    }
}

/// Eight targets per level evenly spaced (endpoints included) along the arc
/// of radius `radius` spanning `sector` (radians, `atan2(y, x)` convention),
/// lower level first, each level in increasing angle.
pub fn default_keypose_set(
    radius: f64,
    z_low: f64,
    z_high: f64,
    sector: (f64, f64),
) -> Result<KeyposeSet, CalibrationError> {
    let width = sector.1 - sector.0;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CalibrationError::InvalidGeometry(format!("radius {radius}")));
    }
    if z_low.is_nan() || z_high.is_nan() || z_low >= z_high {
        return Err(CalibrationError::InvalidGeometry(format!("levels {z_low} >= {z_high}")));
    }
    if !(width > 0.0 && width <= std::f64::consts::PI + 1e-12) {
        return Err(CalibrationError::InvalidGeometry(format!(
            "sector width {} deg not in (0, 180]",
            width.to_degrees()
        )));
    }
    let step = width / (POSES_PER_LEVEL - 1) as f64;
    let targets = [z_low, z_high]
        .iter()
        .flat_map(|&z| {
            (0..POSES_PER_LEVEL).map(move |k| {
                let theta = sector.0 + step * k as f64;
                Vec3::new(radius * theta.cos(), radius * theta.sin(), z)
            })
        })
        .collect();
    KeyposeSet::new(targets)
}

/// Keypose set on the outer wall of `workspace`, at 1/4 and 3/4 of its height.
pub fn workspace_keypose_set(workspace: &WorkspaceModel) -> Result<KeyposeSet, CalibrationError> {
    let (z_min, z_max) = workspace.height();
    let (t0, t1) = workspace.sector();
    let width = (t1 - t0).min(std::f64::consts::PI);
    let mid = 0.5 * (t0 + t1);
    default_keypose_set(
        workspace.radius().1,
        z_min + 0.25 * (z_max - z_min),
        z_min + 0.75 * (z_max - z_min),
        (mid - 0.5 * width, mid + 0.5 * width),
    )
}

/// Negates the horizontal component so the user can mirror a guide figure.
pub fn mirror_arm(u: &ArmVector) -> ArmVector {
    ArmVector(Vec3::new(-u.0.x, u.0.y, u.0.z))
}

/// Shoulder-frame arm components reordered to robot axes:
/// robot x ← normal, robot y ← horizontal, robot z ← vertical.
pub fn to_robot_axes(u: &Vec3) -> Vec3 {
    Vec3::new(u.z, u.x, u.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Collecting,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    /// Seconds of skeleton data per keypose.
    pub window_s: f64,
    pub rate_hz: f64,
    /// Minimum allowed distance between collected arm vectors (meters).
    pub d_min: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            window_s: 2.0,
            rate_hz: 30.0,
            d_min: 0.05,
        }
    }
}

impl CalibrationSettings {
    pub fn required_samples(&self) -> usize {
        (self.window_s * self.rate_hz - 1e-9).ceil().max(1.0) as usize
    }
}

/// Single-writer state machine walking through the 16 keyposes.
#[derive(Debug, Clone)]
pub struct CalibrationSession {
    keyposes: KeyposeSet,
    settings: CalibrationSettings,
    state: SessionState,
    buffer: Vec<Skeleton>,
    collected: Vec<ArmVector>,
    arm_length: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionProgress {
    pub index: usize,
    pub collected: usize,
    pub needed: usize,
}

impl CalibrationSession {
    pub fn new(keyposes: KeyposeSet, settings: CalibrationSettings) -> Self {
        CalibrationSession {
            keyposes,
            settings,
            state: SessionState::Idle,
            buffer: Vec::new(),
            collected: Vec::with_capacity(KEYPOSE_COUNT),
            arm_length: None,
        }
    }

    pub fn start(&mut self) {
        if self.state == SessionState::Idle {
            self.state = SessionState::Collecting;
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn keyposes(&self) -> &KeyposeSet {
        &self.keyposes
    }

    pub fn settings(&self) -> &CalibrationSettings {
        &self.settings
    }

    /// Index of the keypose being collected (16 once done).
    pub fn current_index(&self) -> usize {
        self.collected.len()
    }

    pub fn current_target(&self) -> Option<Vec3> {
        self.keyposes.targets.get(self.current_index()).copied()
    }

    pub fn collected(&self) -> &[ArmVector] {
        &self.collected
    }

    pub fn progress(&self) -> SessionProgress {
        SessionProgress {
            index: self.current_index(),
            collected: self.buffer.len(),
            needed: self.settings.required_samples(),
        }
    }

    /// Buffers one skeleton for the current keypose. Once the window is
    /// full the keypose is finalized and its arm vector returned.
    pub fn push_sample(&mut self, s: Skeleton) -> Result<Option<ArmVector>, CalibrationError> {
        if self.state != SessionState::Collecting {
            return Err(CalibrationError::NotCollecting);
        }
        self.buffer.push(s);
        if self.buffer.len() < self.settings.required_samples() {
            return Ok(None);
        }
        let samples = std::mem::take(&mut self.buffer);
        self.record_keypose(&samples).map(Some)
    }

    /// Drops buffered samples for the current keypose.
    pub fn reset_buffer(&mut self) {
        self.buffer.clear();
    }

    /// Median skeleton → shoulder-frame arm vector → mirrored. Stored
    /// unnormalized; advances to the next keypose.
    pub fn record_keypose(&mut self, samples: &[Skeleton]) -> Result<ArmVector, CalibrationError> {
        if self.state != SessionState::Collecting {
            return Err(CalibrationError::NotCollecting);
        }
        let needed = self.settings.required_samples();
        if samples.len() < needed {
            return Err(CalibrationError::InsufficientSamples {
                got: samples.len(),
                needed,
            });
        }
        let median = median_skeleton(samples)?;
        let arm = mirror_arm(&shoulder_frame_arm(&median)?);
        if self.collected.is_empty() {
            // keypose 0 doubles as the stretched-arm length measurement
            self.arm_length = Some(median.arm_length()?);
        }
        self.collected.push(arm);
        if self.collected.len() == KEYPOSE_COUNT {
            self.state = SessionState::Done;
        }
        Ok(arm)
    }

    /// Builds the (not yet fitted) profile and its quality report.
    pub fn into_profile(self, user: impl Into<String>, created: impl Into<String>) -> Result<CalibrationProfile, CalibrationError> {
        if self.state != SessionState::Done {
            return Err(CalibrationError::Incomplete);
        }
        let quality = validate_profile(&self.collected, self.keyposes.targets(), self.settings.d_min);
        Ok(CalibrationProfile {
            user: user.into(),
            created: created.into(),
            arm_length: self.arm_length.unwrap_or_default(),
            x: self.collected,
            y: self.keyposes.targets,
            tps: None,
            quality,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityIssue {
    TooClose { i: usize, j: usize, distance: f64 },
    UnexpectedRelativePosition { from: usize, to: usize, dot: f64 },
}

impl std::fmt::Display for QualityIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QualityIssue::TooClose { i, j, distance } => {
                write!(f, "TooClose: poses {i} and {j} are {distance:.4} m apart")
            }
            QualityIssue::UnexpectedRelativePosition { from, to, .. } => {
                write!(f, "UnexpectedRelativePosition: pose {to} is not placed relative to pose {from} like its target")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    pub from: usize,
    pub to: usize,
    /// Collected displacement (in robot axes) · target displacement.
    pub dot: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub min_distance: f64,
    pub edges: Vec<EdgeCheck>,
    pub passed: bool,
    pub issues: Vec<QualityIssue>,
}

/// Flags collected poses that sit closer than `d_min` to each other and
/// consecutive poses whose displacement points away from the displacement
/// between their targets.
pub fn validate_profile(x: &[ArmVector], y: &[Vec3], d_min: f64) -> QualityReport {
    let mut issues = Vec::new();
    let mut min_distance = f64::INFINITY;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let d = (x[i].0 - x[j].0).norm();
            min_distance = min_distance.min(d);
            if d < d_min {
                issues.push(QualityIssue::TooClose { i, j, distance: d });
            }
        }
    }

    let n = x.len().min(y.len());
    let edges: Vec<EdgeCheck> = (1..n)
        .map(|to| {
            let from = to - 1;
            let dot = to_robot_axes(&(x[to].0 - x[from].0)).dot(&(y[to] - y[from]));
            EdgeCheck {
                from,
                to,
                dot,
                consistent: dot > 0.0,
            }
        })
        .collect();
    issues.extend(
        edges
            .iter()
            .filter(|e| !e.consistent)
            .map(|e| QualityIssue::UnexpectedRelativePosition {
                from: e.from,
                to: e.to,
                dot: e.dot,
            }),
    );

    QualityReport {
        min_distance,
        edges,
        passed: issues.is_empty() && x.len() == y.len(),
        issues,
    }
}

/// Everything needed to drive the spline map for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub user: String,
    /// ISO-8601.
    pub created: String,
    /// Arm + forearm length measured on keypose 0 (meters).
    pub arm_length: f64,
    /// Mirrored, unnormalized shoulder-frame arm vectors.
    pub x: Vec<ArmVector>,
    /// Robot-frame targets.
    pub y: Vec<Vec3>,
    pub tps: Option<TpsParams>,
    pub quality: QualityReport,
}

impl CalibrationProfile {
    pub fn control_points(&self) -> Vec<Vec3> {
        self.x.iter().map(|a| a.0).collect()
    }
}

pub fn fit_profile(mut profile: CalibrationProfile) -> Result<CalibrationProfile, CalibrationError> {
    if !profile.quality.passed {
        return Err(CalibrationError::QualityRejected(profile.quality.issues.clone()));
    }
    profile.tps = Some(tps_fit(&profile.control_points(), &profile.y, 0.0)?);
    Ok(profile)
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    version: u32,
    user: String,
    created: String,
    arm_length: f64,
    x: Vec<[f64; 3]>,
    y: Vec<[f64; 3]>,
    tps: Option<TpsParams>,
    quality: QualityReport,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<serde_json::Value>,
}

pub fn profile_to_string(p: &CalibrationProfile) -> String {
    let file = ProfileFile {
        version: PROFILE_VERSION,
        user: p.user.clone(),
        created: p.created.clone(),
        arm_length: p.arm_length,
        x: p.x.iter().map(|a| a.0.into()).collect(),
        y: p.y.iter().map(|v| (*v).into()).collect(),
        tps: p.tps.clone(),
        quality: p.quality.clone(),
    };
    serde_json::to_string_pretty(&file).expect("profile serializes")
}

pub fn profile_from_str(text: &str) -> Result<CalibrationProfile, CalibrationError> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| CalibrationError::MalformedProfile(e.to_string()))?;
    match probe.version.as_ref().and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(PROFILE_VERSION) => {}
        Some(v) => {
            return Err(CalibrationError::MalformedProfile(format!("unsupported version {v}")));
        }
        None => return Err(CalibrationError::MalformedProfile("missing version".into())),
    }
    let f: ProfileFile =
        serde_json::from_str(text).map_err(|e| CalibrationError::MalformedProfile(e.to_string()))?;
    if f.x.len() != KEYPOSE_COUNT || f.y.len() != KEYPOSE_COUNT {
        return Err(CalibrationError::MalformedProfile(format!(
            "expected {KEYPOSE_COUNT} correspondences, got {} / {}",
            f.x.len(),
            f.y.len()
        )));
    }
    if f.tps.is_some() && !f.quality.passed {
        return Err(CalibrationError::MalformedProfile("fitted map on a rejected calibration".into()));
    }
    if let Some(tps) = &f.tps {
        let matches = tps.len() == KEYPOSE_COUNT
            && tps.control_points().iter().zip(&f.x).all(|(c, x)| *c == Vec3::from(*x));
        if !matches {
            return Err(CalibrationError::MalformedProfile("spline control points differ from x".into()));
        }
    }
    Ok(CalibrationProfile {
        user: f.user,
        created: f.created,
        arm_length: f.arm_length,
        x: f.x.into_iter().map(|v| ArmVector(v.into())).collect(),
        y: f.y.into_iter().map(Vec3::from).collect(),
        tps: f.tps,
        quality: f.quality,
    })
}

pub fn save_profile(p: &CalibrationProfile, path: &Path) -> Result<(), CalibrationError> {
    fs::write(path, profile_to_string(p))?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<CalibrationProfile, CalibrationError> {
    profile_from_str(&fs::read_to_string(path)?)
}
