//! Human-to-robot arm retargeting.
//!
//! A depth-sensor skeleton is reduced to a right-arm vector expressed in a
//! torso-anchored frame, which is then mapped to a robot gripper position
//! either through a hand-tuned affine map or through a thin-plate spline
//! fitted to 16 per-user keypose correspondences. The crate also carries the
//! depth-image hand preprocessing used to drive the gripper state and a
//! semi-cylindrical workspace model used to clamp and analyze gripper motion.
//!
//! All lengths are meters.

pub mod calibration;
pub mod depth;
pub mod pose_map;
pub mod skeleton;
pub mod workspace;

pub use nalgebra::Vector3;

/// 3D vector in meters (or dimensionless for normalized quantities).
pub type Vec3 = Vector3<f64>;

/// Binary hand / gripper state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripState {
    #[default]
    Open,
    Closed,
}

impl std::fmt::Display for GripState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GripState::Open => "open",
            GripState::Closed => "closed",
        })
    }
}

impl std::str::FromStr for GripState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" => Ok(GripState::Open),
            "closed" => Ok(GripState::Closed),
            other => Err(format!("unknown state `{other}`")),
        }
    }
}
