#![allow(dead_code)]

use retarget_core::skeleton::{JointId, Skeleton};
use retarget_testkit::gen::Body;

pub fn skeleton(body: &Body, t: f64) -> Skeleton {
    Skeleton::new(t)
        .with_joint(JointId::SpineCenter, body.spine_center)
        .with_joint(JointId::ShoulderCenter, body.shoulder_center)
        .with_joint(JointId::RightShoulder, body.right_shoulder)
        .with_joint(JointId::LeftShoulder, body.left_shoulder)
        .with_joint(JointId::RightElbow, body.right_elbow)
        .with_joint(JointId::RightHand, body.right_hand)
}

use retarget_core::Vec3;

/// Upright user facing the camera (torso basis = camera axes) whose
/// shoulder-frame arm vector, *after* mirroring, is `mirrored`. `jitter`
/// offsets every joint, modelling sensor noise.
pub fn user_with_arm(mirrored: Vec3, t: f64, mut jitter: impl FnMut(usize) -> Vec3) -> Skeleton {
    let raw = Vec3::new(-mirrored.x, mirrored.y, mirrored.z);
    let shoulder = Vec3::new(-0.2, 0.4, 2.0);
    let bend = raw.cross(&Vec3::new(0.3, 0.8, 0.5)).normalize() * 0.05;
    let joints = [
        (JointId::SpineCenter, Vec3::new(0.0, 0.0, 2.0)),
        (JointId::ShoulderCenter, Vec3::new(0.0, 0.5, 2.0)),
        (JointId::RightShoulder, shoulder),
        (JointId::LeftShoulder, Vec3::new(0.2, 0.4, 2.0)),
        (JointId::RightElbow, shoulder + raw * 0.5 + bend),
        (JointId::RightHand, shoulder + raw),
    ];
    joints
        .iter()
        .enumerate()
        .fold(Skeleton::new(t), |s, (k, &(id, p))| s.with_joint(id, p + jitter(k)))
}

/// Arm vectors that are a uniformly scaled, axis-permuted copy of the targets
/// (robot x ← normal, y ← horizontal, z ← vertical).
pub fn scaled_arms(targets: &[Vec3], s: f64) -> Vec<Vec3> {
    targets.iter().map(|y| Vec3::new(y.y, y.z, y.x) * s).collect()
}
