//! Live calibration driven by `/calibration/command` and the skeleton stream.
//!
//! A session walks the 16 keyposes in order. For each one a `Target` event
//! is emitted; sampling starts either on an explicit `Capture` command or
//! automatically once the user had `auto_capture_after_s` seconds (skeleton
//! time) to get into position. Every keypose's raw samples are written to
//! the session directory, so a session can be re-fitted offline with
//! [`fit_session_dir`].

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use retarget_core::calibration::{
    fit_profile, save_profile, workspace_keypose_set, CalibrationError, CalibrationProfile, CalibrationSession,
    CalibrationSettings, KeyposeSet, SessionState, KEYPOSE_COUNT, PROFILE_EXTENSION,
};
use retarget_core::skeleton::{read_skeleton_log, write_skeleton_log, LengthUnit, Skeleton};
use retarget_core::workspace::WorkspaceModel;
use retarget_core::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{CalibrationCommand, CalibrationEvent};

#[derive(Debug, Error)]
pub enum SessionDirError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibratorConfig {
    pub settings: CalibrationSettings,
    /// Targets used when a start command brings none; defaults to a set on
    /// the outer workspace wall.
    pub keyposes: Option<Vec<[f64; 3]>>,
    /// Seconds between showing a target and sampling it; `None` waits for a
    /// capture command.
    pub auto_capture_after_s: Option<f64>,
    pub session_dir: PathBuf,
    pub profile_dir: PathBuf,
}

impl Default for CalibratorConfig {
    fn default() -> Self {
        CalibratorConfig {
            settings: CalibrationSettings::default(),
            keyposes: None,
            auto_capture_after_s: Some(3.0),
            session_dir: PathBuf::from("sessions"),
            profile_dir: PathBuf::from("profiles"),
        }
    }
}

/// Contents of `keyposes.json` in a session directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub user: String,
    pub created: String,
    pub targets: Vec<[f64; 3]>,
    pub settings: CalibrationSettings,
}

pub const MANIFEST_FILE: &str = "keyposes.json";

pub fn keypose_file(index: usize) -> String {
    format!("keypose_{index:02}.jsonl")
}

struct Active {
    user: String,
    created: String,
    session: CalibrationSession,
    dir: PathBuf,
    capturing: bool,
    target_shown_at: Option<f64>,
    samples: Vec<Skeleton>,
}

/// Result of feeding the calibrator.
#[derive(Debug, Default)]
pub struct CalibratorOutput {
    pub events: Vec<CalibrationEvent>,
    /// Set when a session finished with an accepted, fitted profile.
    pub accepted: Option<(CalibrationProfile, PathBuf)>,
}

pub struct Calibrator {
    cfg: CalibratorConfig,
    workspace: WorkspaceModel,
    active: Option<Active>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn timestamp_now() -> String {
    chrono::Local::now().to_rfc3339()
}

impl Calibrator {
    pub fn new(cfg: CalibratorConfig, workspace: WorkspaceModel) -> Calibrator {
        Calibrator {
            cfg,
            workspace,
            active: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active.is_some()
    }

    fn keyposes(&self, over: Option<&[[f64; 3]]>) -> Result<KeyposeSet, CalibrationError> {
        match over.or(self.cfg.keyposes.as_deref()) {
            Some(t) => KeyposeSet::new(t.iter().copied().map(Vec3::from).collect()),
            None => workspace_keypose_set(&self.workspace),
        }
    }

    pub fn command(&mut self, cmd: &CalibrationCommand) -> CalibratorOutput {
        let mut out = CalibratorOutput::default();
        match cmd {
            CalibrationCommand::Start { user, keyposes } => {
                if let Some(prev) = self.active.take() {
                    out.events.push(CalibrationEvent::Aborted {
                        reason: format!("superseded by a new session (was at keypose {})", prev.session.current_index()),
                    });
                }
                match self.begin(user, keyposes.as_deref()) {
                    Ok(events) => out.events.extend(events),
                    Err(e) => out.events.push(CalibrationEvent::Rejected {
                        reasons: vec![e.to_string()],
                        report: None,
                    }),
                }
            }
            CalibrationCommand::Capture => {
                if let Some(a) = &mut self.active {
                    a.capturing = true;
                }
            }
            CalibrationCommand::Abort => {
                if self.active.take().is_some() {
                    out.events.push(CalibrationEvent::Aborted {
                        reason: "aborted by client".into(),
                    });
                }
            }
        }
        out
    }

    fn begin(&mut self, user: &str, keyposes: Option<&[[f64; 3]]>) -> Result<Vec<CalibrationEvent>, SessionDirError> {
        if user.is_empty() || user.contains(['/', '\\']) || user.starts_with('.') {
            return Err(SessionDirError::Malformed {
                path: PathBuf::from(user),
                reason: "user label must be a plain file name".into(),
            });
        }
        let set = self.keyposes(keyposes)?;
        let created = timestamp_now();
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
        let dir = self.cfg.session_dir.join(format!("{user}-{stamp}"));
        fs::create_dir_all(&dir).map_err(|source| SessionDirError::Io {
            path: dir.clone(),
            source,
        })?;
        let manifest = SessionManifest {
            user: user.to_string(),
            created: created.clone(),
            targets: set.targets().iter().map(arr).collect(),
            settings: self.cfg.settings,
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;

        let mut session = CalibrationSession::new(set, self.cfg.settings);
        session.start();
        let events = vec![
            CalibrationEvent::Started {
                user: user.to_string(),
                targets: manifest.targets.clone(),
                samples_per_keypose: self.cfg.settings.required_samples(),
            },
            CalibrationEvent::Target {
                index: 0,
                target: manifest.targets[0],
            },
        ];
        self.active = Some(Active {
            user: user.to_string(),
            created,
            session,
            dir,
            capturing: self.cfg.auto_capture_after_s == Some(0.0),
            target_shown_at: None,
            samples: Vec::new(),
        });
        Ok(events)
    }

    /// Feeds one skeleton into the running session (no-op when idle).
    pub fn on_skeleton(&mut self, s: &Skeleton) -> CalibratorOutput {
        let mut out = CalibratorOutput::default();
        let Some(a) = &mut self.active else {
            return out;
        };
        if !a.capturing {
            let shown = *a.target_shown_at.get_or_insert(s.timestamp);
            match self.cfg.auto_capture_after_s {
                Some(wait) if s.timestamp - shown >= wait => a.capturing = true,
                _ => return out,
            }
        }

        let index = a.session.current_index();
        a.samples.push(s.clone());
        let recorded = match a.session.push_sample(s.clone()) {
            Ok(r) => r,
            Err(e) => {
                self.fail(&mut out, vec![e.to_string()], None);
                return out;
            }
        };
        let Some(arm) = recorded else {
            let p = a.session.progress();
            out.events.push(CalibrationEvent::Progress {
                index,
                collected: p.collected,
                needed: p.needed,
            });
            return out;
        };

        let path = a.dir.join(keypose_file(index));
        if let Err(e) = write_samples(&path, &a.samples) {
            self.fail(&mut out, vec![e.to_string()], None);
            return out;
        }
        a.samples.clear();
        out.events.push(CalibrationEvent::Progress {
            index,
            collected: a.session.settings().required_samples(),
            needed: a.session.settings().required_samples(),
        });
        out.events.push(CalibrationEvent::KeyposeRecorded { index, arm: arr(&arm.0) });

        if a.session.state() != SessionState::Done {
            a.capturing = self.cfg.auto_capture_after_s == Some(0.0);
            a.target_shown_at = None;
            let next = a.session.current_index();
            out.events.push(CalibrationEvent::Target {
                index: next,
                target: arr(&a.session.current_target().expect("not done")),
            });
            return out;
        }

        let a = self.active.take().expect("active");
        let profile = match a.session.into_profile(&a.user, &a.created) {
            Ok(p) => p,
            Err(e) => {
                out.events.push(CalibrationEvent::Rejected {
                    reasons: vec![e.to_string()],
                    report: None,
                });
                return out;
            }
        };
        if !profile.quality.passed {
            out.events.push(CalibrationEvent::Rejected {
                reasons: profile.quality.issues.iter().map(ToString::to_string).collect(),
                report: Some(profile.quality),
            });
            return out;
        }
        let report = profile.quality.clone();
        let fitted = match fit_profile(profile) {
            Ok(p) => p,
            Err(e) => {
                out.events.push(CalibrationEvent::Rejected {
                    reasons: vec![e.to_string()],
                    report: Some(report),
                });
                return out;
            }
        };
        match self.store(&fitted, &a.dir) {
            Ok(path) => {
                out.events.push(CalibrationEvent::Accepted {
                    profile: path.display().to_string(),
                    report,
                });
                out.accepted = Some((fitted, path));
            }
            Err(e) => out.events.push(CalibrationEvent::Rejected {
                reasons: vec![format!("could not save profile: {e}")],
                report: Some(report),
            }),
        }
        out
    }

    fn fail(&mut self, out: &mut CalibratorOutput, reasons: Vec<String>, report: Option<retarget_core::calibration::QualityReport>) {
        self.active = None;
        out.events.push(CalibrationEvent::Rejected { reasons, report });
    }

    fn store(&self, p: &CalibrationProfile, session_dir: &Path) -> Result<PathBuf, CalibrationError> {
        fs::create_dir_all(&self.cfg.profile_dir)?;
        let path = self.cfg.profile_dir.join(format!("{}.{PROFILE_EXTENSION}", p.user));
        save_profile(p, &path)?;
        save_profile(p, &session_dir.join(format!("profile.{PROFILE_EXTENSION}")))?;
        Ok(path)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), SessionDirError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|source| SessionDirError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_samples(path: &Path, samples: &[Skeleton]) -> Result<(), SessionDirError> {
    let io = |source| SessionDirError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_skeleton_log(&mut w, samples).map_err(io)?;
    w.flush().map_err(io)
}

/// Re-runs the keypose reduction and the spline fit over a recorded session
/// directory (`keyposes.json` plus `keypose_00.jsonl` … `keypose_15.jsonl`).
pub fn fit_session_dir(dir: &Path) -> Result<CalibrationProfile, SessionDirError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|source| SessionDirError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: SessionManifest = serde_json::from_str(&text).map_err(|e| SessionDirError::Malformed {
        path: manifest_path,
        reason: e.to_string(),
    })?;
    let set = KeyposeSet::new(manifest.targets.iter().copied().map(Vec3::from).collect())?;
    let mut session = CalibrationSession::new(set, manifest.settings);
    session.start();
    for index in 0..KEYPOSE_COUNT {
        let path = dir.join(keypose_file(index));
        let file = File::open(&path).map_err(|source| SessionDirError::Io {
            path: path.clone(),
            source,
        })?;
        let samples = read_skeleton_log(BufReader::new(file), LengthUnit::Meters).map_err(|e| {
            SessionDirError::Malformed {
                path: path.clone(),
                reason: e.to_string(),
            }
        })?;
        session.record_keypose(&samples)?;
    }
    let profile = session.into_profile(manifest.user, manifest.created)?;
    Ok(fit_profile(profile)?)
}
