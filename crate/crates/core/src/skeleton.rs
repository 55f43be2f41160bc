//! Skeletons and the torso-anchored right-arm representation.
//!
//! The arm is described by the hand position relative to the right shoulder,
//! re-expressed in a frame spanned by the torso's horizontal axis (right to
//! left shoulder), its vertical axis (spine to shoulder center) and their
//! normal. This makes the representation independent of where the user
//! stands and how they are turned with respect to the camera.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::Vec3;

/// Segments shorter than this are treated as degenerate.
pub const MIN_SEGMENT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("skeleton is missing joint `{0}`")]
    MissingJoint(JointId),
    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(&'static str),
    #[error("arm and forearm lengths sum to zero")]
    ZeroArmLength,
    #[error("median of an empty sample set")]
    EmptySampleSet,
    #[error("samples do not share the same joint set")]
    InconsistentJointSets,
    #[error("joint `{0}` has non-finite coordinates")]
    NonFinite(JointId),
}

macro_rules! joints {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Body joints as tracked by a depth-sensor skeleton (25-joint set).
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum JointId {
            $($variant),+
        }

        impl JointId {
            pub const ALL: &'static [JointId] = &[$(JointId::$variant),+];

            /// Canonical name used in skeleton logs.
            pub fn name(self) -> &'static str {
                match self {
                    $(JointId::$variant => $name),+
                }
            }
        }

        impl FromStr for JointId {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($name => Ok(JointId::$variant),)+
                    _ => Err(()),
                }
            }
        }
    };
}

joints! {
    SpineBase => "spine_base",
    SpineCenter => "spine_center",
    ShoulderCenter => "shoulder_center",
    Neck => "neck",
    Head => "head",
    LeftShoulder => "left_shoulder",
    LeftElbow => "left_elbow",
    LeftWrist => "left_wrist",
    LeftHand => "left_hand",
    LeftHandTip => "left_hand_tip",
    LeftThumb => "left_thumb",
    RightShoulder => "right_shoulder",
    RightElbow => "right_elbow",
    RightWrist => "right_wrist",
    RightHand => "right_hand",
    RightHandTip => "right_hand_tip",
    RightThumb => "right_thumb",
    LeftHip => "left_hip",
    LeftKnee => "left_knee",
    LeftAnkle => "left_ankle",
    LeftFoot => "left_foot",
    RightHip => "right_hip",
    RightKnee => "right_knee",
    RightAnkle => "right_ankle",
    RightFoot => "right_foot",
}

impl JointId {
    /// Joints needed to build the arm representation.
    pub const REQUIRED: [JointId; 6] = [
        JointId::SpineCenter,
        JointId::ShoulderCenter,
        JointId::RightShoulder,
        JointId::RightElbow,
        JointId::RightHand,
        JointId::LeftShoulder,
    ];
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Timestamped joint positions in camera space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Skeleton {
    /// Seconds.
    pub timestamp: f64,
    pub joints: BTreeMap<JointId, Vec3>,
}

impl Skeleton {
    pub fn new(timestamp: f64) -> Self {
        Skeleton {
            timestamp,
            joints: BTreeMap::new(),
        }
    }

    pub fn with_joint(mut self, id: JointId, position: Vec3) -> Self {
        self.joints.insert(id, position);
        self
    }

    pub fn joint(&self, id: JointId) -> Result<Vec3, SkeletonError> {
        let p = *self.joints.get(&id).ok_or(SkeletonError::MissingJoint(id))?;
        if p.iter().all(|c| c.is_finite()) {
            Ok(p)
        } else {
            Err(SkeletonError::NonFinite(id))
        }
    }

    /// Applies `f` to every joint position.
    pub fn map_joints(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Skeleton {
        Skeleton {
            timestamp: self.timestamp,
            joints: self.joints.iter().map(|(&id, &p)| (id, f(p))).collect(),
        }
    }

    /// Sum of upper-arm and forearm lengths of the right arm.
    pub fn arm_length(&self) -> Result<f64, SkeletonError> {
        let shoulder = self.joint(JointId::RightShoulder)?;
        let elbow = self.joint(JointId::RightElbow)?;
        let hand = self.joint(JointId::RightHand)?;
        Ok((elbow - shoulder).norm() + (hand - elbow).norm())
    }
}

/// Orthogonal-ish frame attached to the torso.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsoBasis {
    /// Right shoulder towards left shoulder.
    pub horizontal: Vec3,
    /// Spine center towards shoulder center.
    pub vertical: Vec3,
    /// Normalized `horizontal × vertical`.
    pub normal: Vec3,
}

impl TorsoBasis {
    pub const IDENTITY: TorsoBasis = TorsoBasis {
        horizontal: Vec3::new(1.0, 0.0, 0.0),
        vertical: Vec3::new(0.0, 1.0, 0.0),
        normal: Vec3::new(0.0, 0.0, 1.0),
    };
}

/// Hand displacement from the right shoulder in the shoulder frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmVector(pub Vec3);

/// [`ArmVector`] divided by the arm + forearm length (dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedArmVector(pub Vec3);

pub fn torso_basis(s: &Skeleton) -> Result<TorsoBasis, SkeletonError> {
    let spine = s.joint(JointId::SpineCenter)?;
    let shoulder_center = s.joint(JointId::ShoulderCenter)?;
    let right_shoulder = s.joint(JointId::RightShoulder)?;
    let left_shoulder = s.joint(JointId::LeftShoulder)?;

    let vertical = shoulder_center - spine;
    if vertical.norm() < MIN_SEGMENT {
        return Err(SkeletonError::DegenerateSkeleton(
            "shoulder center coincides with spine center",
        ));
    }
    let horizontal = left_shoulder - right_shoulder;
    if horizontal.norm() < MIN_SEGMENT {
        return Err(SkeletonError::DegenerateSkeleton(
            "left shoulder coincides with right shoulder",
        ));
    }
    let horizontal = horizontal.normalize();
    let vertical = vertical.normalize();
    let normal = horizontal.cross(&vertical);
    if normal.norm() < MIN_SEGMENT {
        return Err(SkeletonError::DegenerateSkeleton(
            "torso horizontal and vertical axes are parallel",
        ));
    }
    Ok(TorsoBasis {
        horizontal,
        vertical,
        normal: normal.normalize(),
    })
}

/// Right hand minus right shoulder, in camera coordinates.
pub fn arm_vector(s: &Skeleton) -> Result<Vec3, SkeletonError> {
    Ok(s.joint(JointId::RightHand)? - s.joint(JointId::RightShoulder)?)
}

/// Projects `u` onto the three basis vectors. No orthogonalization is applied.
pub fn to_shoulder_frame(u: &Vec3, b: &TorsoBasis) -> ArmVector {
    ArmVector(Vec3::new(
        u.dot(&b.horizontal),
        u.dot(&b.vertical),
        u.dot(&b.normal),
    ))
}

pub fn normalize_arm(s: &Skeleton, u: &ArmVector) -> Result<NormalizedArmVector, SkeletonError> {
    let len = s.arm_length()?;
    if len <= MIN_SEGMENT {
        return Err(SkeletonError::ZeroArmLength);
    }
    Ok(NormalizedArmVector(u.0 / len))
}

/// Full representation: basis, arm vector and change of basis in one call.
pub fn shoulder_frame_arm(s: &Skeleton) -> Result<ArmVector, SkeletonError> {
    let basis = torso_basis(s)?;
    Ok(to_shoulder_frame(&arm_vector(s)?, &basis))
}

/// Coordinate-wise median. Even counts take the midpoint of the two central values.
pub fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-coordinate median over a set of skeletons sharing one joint set.
pub fn median_skeleton(samples: &[Skeleton]) -> Result<Skeleton, SkeletonError> {
    let first = samples.first().ok_or(SkeletonError::EmptySampleSet)?;
    if samples
        .iter()
        .any(|s| s.joints.len() != first.joints.len() || !s.joints.keys().eq(first.joints.keys()))
    {
        return Err(SkeletonError::InconsistentJointSets);
    }

    let mut scratch = vec![0.0; samples.len()];
    let mut column = |f: &dyn Fn(&Skeleton) -> f64| {
        for (slot, s) in scratch.iter_mut().zip(samples) {
            *slot = f(s);
        }
        median(&mut scratch)
    };

    let timestamp = column(&|s| s.timestamp);
    let mut joints = BTreeMap::new();
    for &id in first.joints.keys() {
        let mut p = Vec3::zeros();
        for axis in 0..3 {
            p[axis] = column(&|s| s.joints[&id][axis]);
        }
        joints.insert(id, p);
    }
    Ok(Skeleton { timestamp, joints })
}

// ---------------------------------------------------------------------------
// Skeleton log: one JSON object per line, `t` plus one `[x, y, z]` per joint.

/// Unit of the coordinates found in an incoming log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthUnit {
    #[default]
    Meters,
    Millimeters,
}

impl LengthUnit {
    pub fn to_meters(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Millimeters => 1e-3,
        }
    }
}

impl Serialize for Skeleton {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.joints.len() + 1))?;
        map.serialize_entry("t", &self.timestamp)?;
        for (id, p) in &self.joints {
            map.serialize_entry(id.name(), &[p.x, p.y, p.z])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Skeleton {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, serde_json::Value>::deserialize(deserializer)?;
        let timestamp = raw
            .get("t")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| D::Error::custom("missing numeric field `t`"))?;
        let mut s = Skeleton::new(timestamp);
        for (key, value) in &raw {
            // Unknown keys (extra joints, annotations) are ignored.
            let Ok(id) = key.parse::<JointId>() else {
                continue;
            };
            let xyz: [f64; 3] = serde_json::from_value(value.clone())
                .map_err(|e| D::Error::custom(format!("joint `{key}`: {e}")))?;
            s.joints.insert(id, Vec3::from(xyz));
        }
        Ok(s)
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("malformed log at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses one log line (1-based `line` used for error reporting).
pub fn parse_skeleton_record(text: &str, line: usize, unit: LengthUnit) -> Result<Skeleton, LogError> {
    let s: Skeleton = serde_json::from_str(text).map_err(|e| LogError::Malformed {
        line,
        reason: e.to_string(),
    })?;
    if !s.timestamp.is_finite() {
        return Err(LogError::Malformed {
            line,
            reason: "non-finite timestamp".into(),
        });
    }
    let scale = unit.to_meters();
    Ok(if scale == 1.0 { s } else { s.map_joints(|p| p * scale) })
}

/// Reads a whole skeleton log. Blank lines are skipped.
pub fn read_skeleton_log(reader: impl BufRead, unit: LengthUnit) -> Result<Vec<Skeleton>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_skeleton_record(&line, i + 1, unit)?);
    }
    Ok(out)
}

pub fn write_skeleton_log<'a>(
    mut writer: impl Write,
    skeletons: impl IntoIterator<Item = &'a Skeleton>,
) -> std::io::Result<()> {
    for s in skeletons {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::Rotation3;

    pub fn upright(hand: Vec3) -> Skeleton {
        Skeleton::new(0.0)
            .with_joint(JointId::SpineCenter, Vec3::new(0.0, 0.0, 2.0))
            .with_joint(JointId::ShoulderCenter, Vec3::new(0.0, 0.5, 2.0))
            .with_joint(JointId::RightShoulder, Vec3::new(-0.2, 0.4, 2.0))
            .with_joint(JointId::LeftShoulder, Vec3::new(0.2, 0.4, 2.0))
            .with_joint(JointId::RightElbow, Vec3::new(-0.2, 0.1, 2.0))
            .with_joint(JointId::RightHand, hand)
    }

    fn assert_vec_close(a: &Vec3, b: &Vec3, tol: f64) {
        assert!((a - b).amax() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn axis_aligned_torso() {
        let b = torso_basis(&upright(Vec3::new(0.3, 0.1, 1.8))).unwrap();
        assert_vec_close(&b.horizontal, &Vec3::x(), 1e-15);
        assert_vec_close(&b.vertical, &Vec3::y(), 1e-15);
        assert_vec_close(&b.normal, &Vec3::z(), 1e-15);
    }

    #[test]
    fn zero_length_vertical_is_degenerate() {
        let s = upright(Vec3::zeros()).with_joint(JointId::ShoulderCenter, Vec3::new(0.0, 0.0, 2.0));
        assert!(matches!(torso_basis(&s), Err(SkeletonError::DegenerateSkeleton(_))));
    }

    #[test]
    fn parallel_axes_are_degenerate() {
        let s = upright(Vec3::zeros()).with_joint(JointId::ShoulderCenter, Vec3::new(0.5, 0.0, 2.0));
        assert!(matches!(torso_basis(&s), Err(SkeletonError::DegenerateSkeleton(_))));
    }

    #[test]
    fn rotated_torso_basis_is_rotated_identity() {
        let rot = Rotation3::from_axis_angle(&Vec3::y_axis(), 30f64.to_radians());
        let s = upright(Vec3::new(0.3, 0.1, 1.8)).map_joints(|p| rot * p);
        let b = torso_basis(&s).unwrap();
        assert_vec_close(&b.horizontal, &(rot * Vec3::x()), 1e-9);
        assert_vec_close(&b.vertical, &(rot * Vec3::y()), 1e-9);
        assert_vec_close(&b.normal, &(rot * Vec3::z()), 1e-9);
    }

    #[test]
    fn arm_vector_examples() {
        let s = upright(Vec3::new(0.3, 0.1, 1.8));
        assert_vec_close(&arm_vector(&s).unwrap(), &Vec3::new(0.5, -0.3, -0.2), 1e-15);
        let s = upright(Vec3::new(-0.2, 0.4, 2.0));
        assert_eq!(arm_vector(&s).unwrap(), Vec3::zeros());
        let mut s = upright(Vec3::zeros());
        s.joints.remove(&JointId::RightHand);
        assert_eq!(arm_vector(&s), Err(SkeletonError::MissingJoint(JointId::RightHand)));
    }

    #[test]
    fn change_of_basis() {
        let u = Vec3::new(0.5, -0.3, -0.2);
        assert_eq!(to_shoulder_frame(&u, &TorsoBasis::IDENTITY).0, u);

        let rot = Rotation3::from_axis_angle(&Vec3::y_axis(), 30f64.to_radians());
        let b = TorsoBasis {
            horizontal: rot * Vec3::x(),
            vertical: rot * Vec3::y(),
            normal: rot * Vec3::z(),
        };
        assert_vec_close(&to_shoulder_frame(&b.horizontal, &b).0, &Vec3::x(), 1e-15);

        // brute-force dot products
        let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
        let h = [c, 0.0, -s];
        let n = [s, 0.0, c];
        let expect = Vec3::new(
            0.5 * h[0] + -0.2 * h[2],
            -0.3,
            0.5 * n[0] + -0.2 * n[2],
        );
        assert_vec_close(&to_shoulder_frame(&u, &b).0, &expect, 1e-12);
    }

    #[test]
    fn normalization() {
        let s = Skeleton::new(0.0)
            .with_joint(JointId::RightShoulder, Vec3::zeros())
            .with_joint(JointId::RightElbow, Vec3::new(0.3, 0.0, 0.0))
            .with_joint(JointId::RightHand, Vec3::new(0.6, 0.0, 0.0));
        let n = normalize_arm(&s, &ArmVector(Vec3::new(0.6, 0.0, 0.0))).unwrap();
        assert_vec_close(&n.0, &Vec3::x(), 1e-15);
        let n = normalize_arm(&s, &ArmVector(Vec3::zeros())).unwrap();
        assert_eq!(n.0, Vec3::zeros());

        let collapsed = s.map_joints(|_| Vec3::zeros());
        assert_eq!(
            normalize_arm(&collapsed, &ArmVector(Vec3::zeros())),
            Err(SkeletonError::ZeroArmLength)
        );
    }

    #[test]
    fn median_examples() {
        let a = upright(Vec3::new(0.1, 0.0, 0.0));
        assert_eq!(median_skeleton(std::slice::from_ref(&a)).unwrap(), a);

        let samples: Vec<_> = [0.1, 0.2, 100.0]
            .iter()
            .map(|&x| upright(Vec3::new(x, 0.0, 0.0)))
            .collect();
        let m = median_skeleton(&samples).unwrap();
        assert_eq!(m.joints[&JointId::RightHand].x, 0.2);

        let even: Vec<_> = [1.0, 4.0, 2.0, 3.0]
            .iter()
            .map(|&x| upright(Vec3::new(x, 0.0, 0.0)))
            .collect();
        assert_eq!(median_skeleton(&even).unwrap().joints[&JointId::RightHand].x, 2.5);

        assert_eq!(median_skeleton(&[]), Err(SkeletonError::EmptySampleSet));
        let mut b = a.clone();
        b.joints.remove(&JointId::RightElbow);
        assert_eq!(median_skeleton(&[a, b]), Err(SkeletonError::InconsistentJointSets));
    }

    #[test]
    fn median_matches_sort_and_pick() {
        // five noisy samples, each coordinate checked against an independent sort
        let noise = [
            [0.013, -0.002, 0.007],
            [-0.004, 0.011, -0.009],
            [0.021, 0.003, 0.001],
            [-0.017, -0.008, 0.012],
            [0.002, 0.019, -0.005],
        ];
        let samples: Vec<_> = noise
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let mut s = upright(Vec3::new(0.3, 0.1, 1.8));
                s.timestamp = k as f64 * 0.033;
                s.map_joints(|p| p + Vec3::new(n[0], n[1], n[2]) * (1.0 + p.y))
            })
            .collect();
        let m = median_skeleton(&samples).unwrap();
        for (id, p) in &m.joints {
            for axis in 0..3 {
                let mut col: Vec<f64> = samples.iter().map(|s| s.joints[id][axis]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(p[axis], col[2]);
            }
        }
        assert_eq!(m.timestamp, 2.0 * 0.033);
    }

    #[test]
    fn log_round_trip_and_errors() {
        let s = upright(Vec3::new(0.3, 0.1, 1.8));
        let mut buf = Vec::new();
        write_skeleton_log(&mut buf, [&s, &s]).unwrap();
        let back = read_skeleton_log(&buf[..], LengthUnit::Meters).unwrap();
        assert_eq!(back, vec![s.clone(), s.clone()]);

        let text = "{\"t\": 0.5, \"right_hand\": [300, 100, 1800], \"elbow_flair\": 3}\n";
        let mm = read_skeleton_log(text.as_bytes(), LengthUnit::Millimeters).unwrap();
        assert_eq!(mm[0].joints.len(), 1);
        assert!((mm[0].joints[&JointId::RightHand] - Vec3::new(0.3, 0.1, 1.8)).amax() < 1e-12);

        let bad = "{\"t\": 0}\n{\"t\": 1}\n\n{\"t\": 2, \"right_hand\": [1, 2]}\n";
        match read_skeleton_log(bad.as_bytes(), LengthUnit::Meters) {
            Err(LogError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
