//! One skeleton (plus an optional depth frame) in, one gripper command out.
//!
//! The position path and the state path share nothing but the input
//! skeleton: the position path maps the right arm to a clamped gripper
//! position, the state path crops the hand out of the depth frame and feeds
//! a sliding window of binary hand images to the classifier. A failing state
//! path keeps the previous hand state latched.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use retarget_core::calibration::{fit_profile, load_profile, mirror_arm, CalibrationError, CalibrationProfile};
use retarget_core::depth::{
    binarize, crop_hand, hand_box_side, resample_50, DepthError, DepthFrame, ForegroundRatioClassifier, HandImage,
    HandState, HandStateClassifier, Pixel, DEFAULT_THRESHOLD,
};
use retarget_core::pose_map::{affine_map, tps_eval, AffineMapParams, TpsParams};
use retarget_core::skeleton::{normalize_arm, shoulder_frame_arm, JointId, Skeleton, SkeletonError};
use retarget_core::workspace::WorkspaceModel;
use retarget_core::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{MapMode, PoseMsg};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Profile(#[from] CalibrationError),
    #[error("{0} mode needs a passing calibration profile")]
    NoProfile(MapMode),
    #[error("hand joint is behind the camera")]
    HandNotVisible,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Pinhole model of the depth camera, camera y pointing up. Defaults match
/// a 512 × 424 time-of-flight sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 365.5,
            fy: 365.5,
            cx: 254.9,
            cy: 205.4,
        }
    }
}

impl CameraIntrinsics {
    /// Pixel hit by the camera-space point `p`, if it lies in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<Pixel> {
        if !p.iter().all(|c| c.is_finite()) || p.z <= 0.0 {
            return None;
        }
        let u = self.cx + self.fx * p.x / p.z;
        let v = self.cy - self.fy * p.y / p.z;
        if !(u.abs() < 1e9 && v.abs() < 1e9) {
            return None;
        }
        Some(Pixel {
            x: u.round() as i64,
            y: v.round() as i64,
        })
    }

    /// Inverse of [`project`](Self::project) for a pixel at depth `z`.
    pub fn unproject(&self, px: Pixel, z: f64) -> Vec3 {
        Vec3::new(
            (px.x as f64 - self.cx) * z / self.fx,
            (self.cy - px.y as f64) * z / self.fy,
            z,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: MapMode,
    pub affine: AffineMapParams,
    pub profile: Option<PathBuf>,
    pub workspace: WorkspaceModel,
    pub frame_rate: f64,
    pub classifier: ForegroundRatioClassifier,
    /// Depth band kept behind the closest hand pixel (meters).
    pub depth_threshold: f64,
    pub camera: CameraIntrinsics,
    pub position_path: bool,
    pub state_path: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let workspace = WorkspaceModel::default();
        PipelineConfig {
            mode: MapMode::Affine,
            affine: default_affine(&workspace),
            profile: None,
            workspace,
            frame_rate: 30.0,
            classifier: ForegroundRatioClassifier::default(),
            depth_threshold: DEFAULT_THRESHOLD,
            camera: CameraIntrinsics::default(),
            position_path: true,
            state_path: true,
        }
    }
}

/// Gains sized so a fully stretched arm reaches roughly the workspace
/// boundary, centered on the workspace.
pub fn default_affine(workspace: &WorkspaceModel) -> AffineMapParams {
    AffineMapParams::new(Vec3::new(0.3, 0.3, 0.25), workspace.center(), 1).expect("valid defaults")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// `None` when the position path is disabled.
    pub pose: Option<PoseMsg>,
    /// Mapped position before clamping.
    pub unclamped: Option<Vec3>,
    /// Hand state after this step (latched if the state path did not decide).
    pub hand: HandState,
    /// Newest 50 × 50 crop, when the state path produced one.
    pub hand_image: Option<HandImage>,
    /// Why the state path did not produce an image this step.
    pub state_error: Option<String>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    profile: Option<Arc<CalibrationProfile>>,
    window: VecDeque<HandImage>,
    hand: HandState,
}

impl Pipeline {
    /// Builds the pipeline, loading `cfg.profile` if set.
    pub fn new(cfg: PipelineConfig) -> Result<Pipeline, PipelineError> {
        if cfg.classifier.window == 0 {
            return Err(PipelineError::Config("classifier window must be at least 1".into()));
        }
        if cfg.frame_rate.is_nan() || cfg.frame_rate <= 0.0 {
            return Err(PipelineError::Config("frame rate must be positive".into()));
        }
        let mode = cfg.mode;
        let path = cfg.profile.clone();
        let mut p = Pipeline {
            cfg,
            profile: None,
            window: VecDeque::new(),
            hand: HandState::default(),
        };
        if let Some(path) = path {
            p.load_profile(&path)?;
        }
        p.cfg.mode = MapMode::Affine;
        p.set_mode(mode)?;
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn mode(&self) -> MapMode {
        self.cfg.mode
    }

    pub fn profile(&self) -> Option<&CalibrationProfile> {
        self.profile.as_deref()
    }

    pub fn hand_state(&self) -> HandState {
        self.hand
    }

    /// Overrides the latched hand state (manual toggle).
    pub fn set_hand_state(&mut self, h: HandState) {
        self.hand = h;
    }

    pub fn set_paths(&mut self, position: bool, state: bool) {
        self.cfg.position_path = position;
        self.cfg.state_path = state;
    }

    /// Switches the mapping. Spline modes need a loaded profile; on error
    /// the current mode is kept.
    pub fn set_mode(&mut self, mode: MapMode) -> Result<(), PipelineError> {
        if mode != MapMode::Affine && self.profile.is_none() {
            return Err(PipelineError::NoProfile(mode));
        }
        self.cfg.mode = mode;
        Ok(())
    }

    /// Installs a profile. It must have passed the quality gate; a passing
    /// profile without a fitted spline is fitted here.
    pub fn set_profile(&mut self, profile: CalibrationProfile) -> Result<(), PipelineError> {
        let profile = if profile.tps.is_some() {
            if !profile.quality.passed {
                return Err(CalibrationError::QualityRejected(profile.quality.issues.clone()).into());
            }
            profile
        } else {
            fit_profile(profile)?
        };
        self.profile = Some(Arc::new(profile));
        Ok(())
    }

    pub fn load_profile(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.set_profile(load_profile(path)?)?;
        self.cfg.profile = Some(path.to_path_buf());
        Ok(())
    }

    fn spline(&self) -> Result<&TpsParams, PipelineError> {
        self.profile
            .as_ref()
            .and_then(|p| p.tps.as_ref())
            .ok_or(PipelineError::NoProfile(self.cfg.mode))
    }

    /// Maps one skeleton to an unclamped gripper position with `mode`.
    pub fn map_position(&self, s: &Skeleton, mode: MapMode) -> Result<Vec3, PipelineError> {
        let arm = shoulder_frame_arm(s)?;
        match mode {
            MapMode::Affine => Ok(affine_map(&normalize_arm(s, &arm)?, &self.cfg.affine)),
            MapMode::Tps | MapMode::SideBySide => Ok(tps_eval(&mirror_arm(&arm).0, self.spline()?)),
        }
    }

    /// Runs one step. Position-path failures are returned as errors (the
    /// state path has already run and updated the latch by then).
    pub fn step(&mut self, s: &Skeleton, depth: Option<&DepthFrame>) -> Result<StepOutput, PipelineError> {
        let mut hand_image = None;
        let mut state_error = None;
        if self.cfg.state_path {
            if let Some(frame) = depth {
                match self.state_step(s, frame) {
                    Ok(img) => hand_image = Some(img),
                    Err(e) => state_error = Some(e.to_string()),
                }
            }
        }

        let (pose, unclamped) = if self.cfg.position_path {
            let mode = self.cfg.mode;
            let raw = self.map_position(s, mode)?;
            let compare = if mode == MapMode::SideBySide {
                let a = self.cfg.workspace.clamp(&self.map_position(s, MapMode::Affine)?);
                Some([a.x, a.y, a.z])
            } else {
                None
            };
            let pose = PoseMsg {
                t: s.timestamp,
                pos: self.cfg.workspace.clamp(&raw),
                state: self.hand.state,
                mode,
                compare,
            };
            (Some(pose), Some(raw))
        } else {
            (None, None)
        };

        Ok(StepOutput {
            pose,
            unclamped,
            hand: self.hand,
            hand_image,
            state_error,
        })
    }

    fn state_step(&mut self, s: &Skeleton, frame: &DepthFrame) -> Result<HandImage, PipelineError> {
        let hand = s.joint(JointId::RightHand)?;
        let px = self.cfg.camera.project(&hand).ok_or(PipelineError::HandNotVisible)?;
        let in_frame = px.x >= 0 && px.y >= 0 && (px.x as usize) < frame.width() && (px.y as usize) < frame.height();
        // Prefer the measured depth under the hand joint; fall back to the
        // joint's own depth where the sensor has a hole.
        let d = match in_frame.then(|| frame.get(px.x as usize, px.y as usize)) {
            Some(v) if v > 0.0 => v,
            _ => hand.z,
        };
        let side = hand_box_side(d, frame.width().min(frame.height()))?;
        let crop = crop_hand(frame, px, side)?;
        let img = resample_50(&binarize(&crop, self.cfg.depth_threshold)?);

        let n = self.cfg.classifier.window_len();
        self.window.push_back(img.clone());
        while self.window.len() > n {
            self.window.pop_front();
        }
        if self.window.len() == n {
            self.hand = self.cfg.classifier.classify(self.window.make_contiguous());
        }
        Ok(img)
    }
}
