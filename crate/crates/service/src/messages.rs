//! Topic names, typed payloads and the wire envelope.

use std::fmt;
use std::sync::Arc;

use retarget_core::calibration::QualityReport;
use retarget_core::depth::{DepthFrame, HandImage, HandState, ImageMode};
use retarget_core::skeleton::Skeleton;
use retarget_core::{GripState, Vec3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

pub const SKELETON: &str = "/skeleton";
pub const DEPTH: &str = "/depth";
pub const GRIPPER_POSE: &str = "/gripper/pose";
pub const GRIPPER_STATE: &str = "/gripper/state";
pub const HAND_IMAGE: &str = "/hand_image";
pub const CALIBRATION_EVENT: &str = "/calibration/event";
pub const CALIBRATION_COMMAND: &str = "/calibration/command";
pub const PIPELINE_MODE: &str = "/pipeline/mode";
pub const PIPELINE_STATUS: &str = "/pipeline/status";
pub const REPLAY_STATUS: &str = "/replay/status";

/// Control topics understood by the TCP server and the browser bridge. They
/// never reach the broker.
pub const CONTROL_SUBSCRIBE: &str = "$subscribe";
pub const CONTROL_SUBSCRIBED: &str = "$subscribed";
pub const CONTROL_ERROR: &str = "$error";

/// Payload type carried by a topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Skeleton,
    Depth,
    GripperPose,
    GripperState,
    HandImage,
    CalibrationEvent,
    CalibrationCommand,
    PipelineMode,
    PipelineStatus,
    ReplayStatus,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The standard topic table.
pub fn standard_topics() -> Vec<(&'static str, PayloadKind)> {
    vec![
        (SKELETON, PayloadKind::Skeleton),
        (DEPTH, PayloadKind::Depth),
        (GRIPPER_POSE, PayloadKind::GripperPose),
        (GRIPPER_STATE, PayloadKind::GripperState),
        (HAND_IMAGE, PayloadKind::HandImage),
        (CALIBRATION_EVENT, PayloadKind::CalibrationEvent),
        (CALIBRATION_COMMAND, PayloadKind::CalibrationCommand),
        (PIPELINE_MODE, PayloadKind::PipelineMode),
        (PIPELINE_STATUS, PayloadKind::PipelineStatus),
        (REPLAY_STATUS, PayloadKind::ReplayStatus),
    ]
}

/// Active pose mapping. `SideBySide` drives the gripper with the spline and
/// additionally reports the affine result for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    #[default]
    Affine,
    Tps,
    SideBySide,
}

impl fmt::Display for MapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapMode::Affine => "affine",
            MapMode::Tps => "tps",
            MapMode::SideBySide => "side_by_side",
        })
    }
}

impl std::str::FromStr for MapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "affine" => Ok(MapMode::Affine),
            "tps" => Ok(MapMode::Tps),
            "side_by_side" | "side-by-side" => Ok(MapMode::SideBySide),
            other => Err(format!("unknown mode `{other}` (affine, tps, side_by_side)")),
        }
    }
}

fn vec3_ser<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
    [v.x, v.y, v.z].serialize(s)
}

fn vec3_de<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
    <[f64; 3]>::deserialize(d).map(Vec3::from)
}

/// Gripper target produced by one pipeline step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    /// Timestamp of the skeleton that produced this pose.
    pub t: f64,
    #[serde(serialize_with = "vec3_ser", deserialize_with = "vec3_de")]
    pub pos: Vec3,
    pub state: GripState,
    pub mode: MapMode,
    /// Affine pose for the same input, present in side-by-side mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub t: f64,
    pub state: GripState,
    pub confidence: f64,
}

impl StateMsg {
    pub fn new(t: f64, h: HandState) -> Self {
        StateMsg {
            t,
            state: h.state,
            confidence: h.confidence,
        }
    }
}

/// Depth frame in meters (row-major, 0 = no data) with its capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMsg {
    pub t: f64,
    pub frame: Arc<DepthFrame>,
}

#[derive(Serialize, Deserialize)]
struct RawDepth {
    t: f64,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Serialize for DepthMsg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawDepth {
            t: self.t,
            width: self.frame.width(),
            height: self.frame.height(),
            data: self.frame.data().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DepthMsg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawDepth::deserialize(d)?;
        let frame = DepthFrame::new(raw.width, raw.height, raw.data).map_err(D::Error::custom)?;
        Ok(DepthMsg {
            t: raw.t,
            frame: Arc::new(frame),
        })
    }
}

/// Binary 50 × 50 hand crop, pixels as 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandImageMsg {
    pub t: f64,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl HandImageMsg {
    pub fn new(t: f64, img: &HandImage) -> Self {
        HandImageMsg {
            t,
            width: img.width(),
            height: img.height(),
            pixels: img.pixels().iter().map(|&v| u8::from(v > 0.5)).collect(),
        }
    }

    pub fn to_image(&self) -> Result<HandImage, retarget_core::depth::DepthError> {
        HandImage::new(
            self.width,
            self.height,
            ImageMode::Binary,
            self.pixels.iter().map(|&v| f64::from(v.min(1))).collect(),
        )
    }
}

/// Requests from a client (the browser wizard or `retarget calibrate`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CalibrationCommand {
    /// Begins a new session at keypose 0. `keyposes` overrides the configured
    /// targets (16 robot-frame points).
    Start {
        user: String,
        #[serde(default)]
        keyposes: Option<Vec<[f64; 3]>>,
    },
    /// Starts sampling the current keypose (when auto-capture is off or the
    /// user is ready early).
    Capture,
    Abort,
}

/// Progress of a calibration session, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CalibrationEvent {
    Started {
        user: String,
        targets: Vec<[f64; 3]>,
        samples_per_keypose: usize,
    },
    /// The user should now take keypose `index`.
    Target { index: usize, target: [f64; 3] },
    Progress { index: usize, collected: usize, needed: usize },
    KeyposeRecorded { index: usize, arm: [f64; 3] },
    Rejected {
        reasons: Vec<String>,
        report: Option<QualityReport>,
    },
    Accepted { profile: String, report: QualityReport },
    Aborted { reason: String },
}

/// Runtime mode switch request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRequest {
    pub mode: MapMode,
    /// Profile to load before switching (required for `tps` unless one is
    /// already loaded).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineStatus {
    Mode {
        mode: MapMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile_user: Option<String>,
    },
    ModeRejected { requested: MapMode, reason: String },
    /// Every skeleton published before an end-of-stream marker has been
    /// processed and its outputs published.
    Drained { frames: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReplayStatus {
    EndOfStream { records: usize },
}

/// A typed message body.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Skeleton(Skeleton),
    Depth(DepthMsg),
    GripperPose(PoseMsg),
    GripperState(StateMsg),
    HandImage(HandImageMsg),
    CalibrationEvent(CalibrationEvent),
    CalibrationCommand(CalibrationCommand),
    PipelineMode(ModeRequest),
    PipelineStatus(PipelineStatus),
    ReplayStatus(ReplayStatus),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Skeleton(_) => PayloadKind::Skeleton,
            Payload::Depth(_) => PayloadKind::Depth,
            Payload::GripperPose(_) => PayloadKind::GripperPose,
            Payload::GripperState(_) => PayloadKind::GripperState,
            Payload::HandImage(_) => PayloadKind::HandImage,
            Payload::CalibrationEvent(_) => PayloadKind::CalibrationEvent,
            Payload::CalibrationCommand(_) => PayloadKind::CalibrationCommand,
            Payload::PipelineMode(_) => PayloadKind::PipelineMode,
            Payload::PipelineStatus(_) => PayloadKind::PipelineStatus,
            Payload::ReplayStatus(_) => PayloadKind::ReplayStatus,
        }
    }

    /// Parses a JSON body known to be of `kind`.
    pub fn decode(kind: PayloadKind, json: &str) -> serde_json::Result<Payload> {
        Ok(match kind {
            PayloadKind::Skeleton => Payload::Skeleton(serde_json::from_str(json)?),
            PayloadKind::Depth => Payload::Depth(serde_json::from_str(json)?),
            PayloadKind::GripperPose => Payload::GripperPose(serde_json::from_str(json)?),
            PayloadKind::GripperState => Payload::GripperState(serde_json::from_str(json)?),
            PayloadKind::HandImage => Payload::HandImage(serde_json::from_str(json)?),
            PayloadKind::CalibrationEvent => Payload::CalibrationEvent(serde_json::from_str(json)?),
            PayloadKind::CalibrationCommand => Payload::CalibrationCommand(serde_json::from_str(json)?),
            PayloadKind::PipelineMode => Payload::PipelineMode(serde_json::from_str(json)?),
            PayloadKind::PipelineStatus => Payload::PipelineStatus(serde_json::from_str(json)?),
            PayloadKind::ReplayStatus => Payload::ReplayStatus(serde_json::from_str(json)?),
        })
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Payload::Skeleton(v) => v.serialize(s),
            Payload::Depth(v) => v.serialize(s),
            Payload::GripperPose(v) => v.serialize(s),
            Payload::GripperState(v) => v.serialize(s),
            Payload::HandImage(v) => v.serialize(s),
            Payload::CalibrationEvent(v) => v.serialize(s),
            Payload::CalibrationCommand(v) => v.serialize(s),
            Payload::PipelineMode(v) => v.serialize(s),
            Payload::PipelineStatus(v) => v.serialize(s),
            Payload::ReplayStatus(v) => v.serialize(s),
        }
    }
}

/// Identifies the publishing handle of a message inside one process.
pub type PublisherId = u64;

/// A published message as delivered to subscribers.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: Arc<str>,
    /// Strictly increasing per (publisher, topic), starting at 1.
    pub seq: u64,
    /// Publish time, seconds since the Unix epoch.
    pub t: f64,
    pub payload: Payload,
    pub publisher: PublisherId,
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    topic: &'a str,
    seq: u64,
    t: f64,
    payload: &'a Payload,
}

/// Wire form `{topic, seq, t, payload}` with the payload left unparsed until
/// its topic type is known.
#[derive(Debug, Deserialize)]
pub struct RawEnvelope {
    pub topic: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub t: f64,
    pub payload: Box<RawValue>,
}

impl Message {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&EnvelopeOut {
            topic: &self.topic,
            seq: self.seq,
            t: self.t,
            payload: &self.payload,
        })
        .expect("payloads serialize")
    }
}

/// Serializes an envelope for a payload that is not (yet) a broker message,
/// e.g. on the client side.
pub fn envelope_json(topic: &str, seq: u64, t: f64, payload: &impl Serialize) -> String {
    #[derive(Serialize)]
    struct Out<'a, P: Serialize> {
        topic: &'a str,
        seq: u64,
        t: f64,
        payload: &'a P,
    }
    serde_json::to_string(&Out { topic, seq, t, payload }).expect("payloads serialize")
}

/// Current wall time in seconds since the Unix epoch.
pub fn now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use retarget_core::skeleton::JointId;

    #[test]
    fn envelope_round_trip() {
        let s = Skeleton::new(0.5).with_joint(JointId::RightHand, Vec3::new(0.1, 0.2, 1.0 / 3.0));
        let msg = Message {
            topic: SKELETON.into(),
            seq: 4,
            t: 12.5,
            payload: Payload::Skeleton(s.clone()),
            publisher: 1,
        };
        let json = msg.to_json();
        let raw: RawEnvelope = serde_json::from_str(&json).unwrap();
        assert_eq!((raw.topic.as_str(), raw.seq, raw.t), (SKELETON, 4, 12.5));
        assert_eq!(
            Payload::decode(PayloadKind::Skeleton, raw.payload.get()).unwrap(),
            Payload::Skeleton(s)
        );
    }

    #[test]
    fn tagged_payloads() {
        let cmd: CalibrationCommand = serde_json::from_str(r#"{"command":"start","user":"ana"}"#).unwrap();
        assert_eq!(
            cmd,
            CalibrationCommand::Start {
                user: "ana".into(),
                keyposes: None
            }
        );
        let req: ModeRequest = serde_json::from_str(r#"{"mode":"tps"}"#).unwrap();
        assert_eq!(req.mode, MapMode::Tps);
        assert!(Payload::decode(PayloadKind::GripperPose, r#"{"mode":"tps"}"#).is_err());
    }

    #[test]
    fn depth_frame_validation() {
        let ok = r#"{"t":0,"width":2,"height":1,"data":[1.0,0.0]}"#;
        assert!(Payload::decode(PayloadKind::Depth, ok).is_ok());
        let short = r#"{"t":0,"width":2,"height":2,"data":[1.0]}"#;
        assert!(Payload::decode(PayloadKind::Depth, short).is_err());
    }
}
