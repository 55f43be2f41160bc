//! Service configuration file (TOML). Every field is optional.
//!
//! ```toml
//! frame_rate = 30.0
//! mode = "affine"            # affine | tps | side_by_side
//! profile = "profiles/ana.rtkprofile"
//! listen = "127.0.0.1:7400"
//!
//! [workspace]
//! r_min = 0.15
//! r_max = 0.45
//! z_min = 0.10
//! z_max = 0.55
//! theta_min_deg = -90.0
//! theta_max_deg = 90.0
//!
//! [affine]
//! omega = [0.3, 0.3, 0.25]
//! delta = [0.3, 0.0, 0.325]  # defaults to the workspace center
//! eta = 1
//!
//! [classifier]
//! window = 15
//! threshold = 0.28
//! ```

use std::path::{Path, PathBuf};

use retarget_core::calibration::CalibrationSettings;
use retarget_core::depth::{ForegroundRatioClassifier, DEFAULT_THRESHOLD, DEFAULT_WINDOW};
use retarget_core::pose_map::AffineMapParams;
use retarget_core::workspace::WorkspaceModel;
use retarget_core::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{QueuePolicy, DEFAULT_QUEUE};
use crate::calibrator::CalibratorConfig;
use crate::messages::MapMode;
use crate::pipeline::{default_affine, CameraIntrinsics, PipelineConfig};

/// Environment variable naming the config file when no flag is given.
pub const CONFIG_ENV: &str = "RETARGET_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineSection {
    pub omega: [f64; 3],
    /// `None` centers the map on the workspace.
    pub delta: Option<[f64; 3]>,
    pub eta: i8,
}

impl Default for AffineSection {
    fn default() -> Self {
        let d = default_affine(&WorkspaceModel::default());
        AffineSection {
            omega: d.omega().into(),
            delta: None,
            eta: d.eta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub window: usize,
    pub threshold: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ForegroundRatioClassifier::default();
        ClassifierSection {
            window: DEFAULT_WINDOW,
            threshold: c.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub threshold: f64,
}

impl Default for DepthSection {
    fn default() -> Self {
        DepthSection {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub window_s: f64,
    pub d_min: f64,
    pub auto_capture_after_s: Option<f64>,
    pub keyposes: Option<Vec<[f64; 3]>>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let s = CalibrationSettings::default();
        CalibrationSection {
            window_s: s.window_s,
            d_min: s.d_min,
            auto_capture_after_s: CalibratorConfig::default().auto_capture_after_s,
            keyposes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    /// Speed below which the gripper counts as stopped (m/s).
    pub v_stop: f64,
    /// Minimum stop duration separating two movements (s).
    pub dwell: f64,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        SegmentationSection { v_stop: 0.02, dwell: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub frame_rate: f64,
    pub mode: MapMode,
    pub profile: Option<PathBuf>,
    pub listen: String,
    pub ws_listen: String,
    pub ui_listen: String,
    pub profile_dir: PathBuf,
    pub session_dir: PathBuf,
    /// Per-subscriber queue depth for live network clients.
    pub queue_capacity: usize,
    pub workspace: WorkspaceModel,
    pub affine: AffineSection,
    pub classifier: ClassifierSection,
    pub depth: DepthSection,
    pub camera: CameraIntrinsics,
    pub calibration: CalibrationSection,
    pub segmentation: SegmentationSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            frame_rate: 30.0,
            mode: MapMode::Affine,
            profile: None,
            listen: "127.0.0.1:7400".into(),
            ws_listen: "127.0.0.1:7401".into(),
            ui_listen: "127.0.0.1:7402".into(),
            profile_dir: PathBuf::from("profiles"),
            session_dir: PathBuf::from("sessions"),
            queue_capacity: DEFAULT_QUEUE,
            workspace: WorkspaceModel::default(),
            affine: AffineSection::default(),
            classifier: ClassifierSection::default(),
            depth: DepthSection::default(),
            camera: CameraIntrinsics::default(),
            calibration: CalibrationSection::default(),
            segmentation: SegmentationSection::default(),
        }
    }
}

/// Config file to use: the explicit flag, else `RETARGET_CONFIG`, else none.
pub fn resolve_config_path(flag: Option<&Path>, env: Option<&str>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from))
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<ServiceConfig, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate().map_err(|reason| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(cfg)
    }

    /// Loads `path`, resolving relative profile/session paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<ServiceConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = ServiceConfig::from_toml(&text, path)?;
        if let Some(base) = path.parent().filter(|b| !b.as_os_str().is_empty()) {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut cfg.profile_dir);
            fix(&mut cfg.session_dir);
            if let Some(p) = &mut cfg.profile {
                fix(p);
            }
        }
        Ok(cfg)
    }

    /// Loads the file picked by [`resolve_config_path`] or returns defaults.
    pub fn load_or_default(flag: Option<&Path>) -> Result<(ServiceConfig, Option<PathBuf>), ConfigError> {
        let env = std::env::var(CONFIG_ENV).ok();
        match resolve_config_path(flag, env.as_deref()) {
            Some(p) => Ok((ServiceConfig::load(&p)?, Some(p))),
            None => Ok((ServiceConfig::default(), None)),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if self.classifier.window == 0 {
            return Err("classifier.window must be at least 1".into());
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be at least 1".into());
        }
        self.affine_params().map(|_| ())
    }

    pub fn affine_params(&self) -> Result<AffineMapParams, String> {
        let delta = self
            .affine
            .delta
            .map(Vec3::from)
            .unwrap_or_else(|| self.workspace.center());
        AffineMapParams::new(self.affine.omega.into(), delta, self.affine.eta).map_err(|e| e.to_string())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            affine: self.affine_params().expect("validated"),
            profile: self.profile.clone(),
            workspace: self.workspace,
            frame_rate: self.frame_rate,
            classifier: ForegroundRatioClassifier {
                threshold: self.classifier.threshold,
                window: self.classifier.window,
            },
            depth_threshold: self.depth.threshold,
            camera: self.camera,
            position_path: true,
            state_path: true,
        }
    }

    pub fn calibrator(&self) -> CalibratorConfig {
        CalibratorConfig {
            settings: CalibrationSettings {
                window_s: self.calibration.window_s,
                rate_hz: self.frame_rate,
                d_min: self.calibration.d_min,
            },
            keyposes: self.calibration.keyposes.clone(),
            auto_capture_after_s: self.calibration.auto_capture_after_s,
            session_dir: self.session_dir.clone(),
            profile_dir: self.profile_dir.clone(),
        }
    }

    pub fn queue(&self) -> QueuePolicy {
        QueuePolicy::DropOldest(self.queue_capacity)
    }
}
