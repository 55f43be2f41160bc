#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;
use std::time::Duration;

use rand::Rng;
use retarget_core::calibration::{default_keypose_set, CalibrationProfile, CalibrationSession, CalibrationSettings, KeyposeSet};
use retarget_core::depth::{hand_box_side, DepthFrame};
use retarget_core::skeleton::{JointId, Skeleton};
use retarget_core::Vec3;
use retarget_service::broker::{RecvError, Subscription};
use retarget_service::messages::Message;
use retarget_service::pipeline::CameraIntrinsics;
use retarget_testkit::gen;

pub const SHOULDER: Vec3 = Vec3::new(-0.2, 0.4, 2.0);

/// Upright user facing the camera whose mirrored shoulder-frame arm vector
/// is `mirrored`; `jitter(k)` offsets joint `k`.
pub fn user_with_arm(mirrored: Vec3, t: f64, mut jitter: impl FnMut(usize) -> Vec3) -> Skeleton {
    let raw = Vec3::new(-mirrored.x, mirrored.y, mirrored.z);
    let bend = if raw.norm() > 1e-9 {
        raw.cross(&Vec3::new(0.3, 0.8, 0.5)).normalize() * 0.05
    } else {
        Vec3::new(0.0, -0.3, 0.0)
    };
    let joints = [
        (JointId::SpineCenter, Vec3::new(0.0, 0.0, 2.0)),
        (JointId::ShoulderCenter, Vec3::new(0.0, 0.5, 2.0)),
        (JointId::RightShoulder, SHOULDER),
        (JointId::LeftShoulder, Vec3::new(0.2, 0.4, 2.0)),
        (JointId::RightElbow, SHOULDER + raw * 0.5 + bend),
        (JointId::RightHand, SHOULDER + raw),
    ];
    joints
        .iter()
        .enumerate()
        .fold(Skeleton::new(t), |s, (k, &(id, p))| s.with_joint(id, p + jitter(k)))
}

pub fn still(mirrored: Vec3, t: f64) -> Skeleton {
    user_with_arm(mirrored, t, |_| Vec3::zeros())
}

pub fn keyposes() -> KeyposeSet {
    default_keypose_set(0.4, 0.2, 0.45, (-FRAC_PI_2, FRAC_PI_2)).unwrap()
}

/// Arm vectors forming a scaled, axis-permuted copy of the targets.
pub fn scaled_arms(targets: &[Vec3], s: f64) -> Vec<Vec3> {
    targets.iter().map(|y| Vec3::new(y.y, y.z, y.x) * s).collect()
}

/// Frames for a full scripted session: `per_pose` noisy frames per keypose.
pub fn session_frames(arms: &[Vec3], per_pose: usize, noise: f64, rng: &mut impl Rng) -> Vec<Skeleton> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for arm in arms {
        for _ in 0..per_pose {
            out.push(user_with_arm(*arm, t, |_| {
                Vec3::new(
                    rng.random_range(-noise..=noise),
                    rng.random_range(-noise..=noise),
                    rng.random_range(-noise..=noise),
                )
            }));
            t += 1.0 / 30.0;
        }
    }
    out
}

/// Runs a whole session offline and returns the (unfitted) profile.
pub fn offline_profile(arms: &[Vec3], noise: f64, rng: &mut impl Rng) -> CalibrationProfile {
    let mut session = CalibrationSession::new(keyposes(), CalibrationSettings::default());
    session.start();
    for s in session_frames(arms, 60, noise, rng) {
        session.push_sample(s).unwrap();
    }
    session.into_profile("tester", "2024-01-01T00:00:00Z").unwrap()
}

/// 512 × 424 depth frame with a disc-shaped hand around the right-hand joint.
/// An open hand fills about 38 % of the crop, a closed one about 10 %.
pub fn hand_frame(cam: &CameraIntrinsics, s: &Skeleton, open: bool) -> DepthFrame {
    let hand = s.joint(JointId::RightHand).unwrap();
    let px = cam.project(&hand).unwrap();
    let side = hand_box_side(hand.z, 424).unwrap() as f64;
    let radius = side * if open { 0.35 } else { 0.18 };
    let data = gen::hand_scene(512, 424, (px.x as usize, px.y as usize), radius, hand.z, hand.z + 1.5);
    DepthFrame::new(512, 424, data).unwrap()
}

/// Receives until `pred` matches, failing after `timeout`.
pub fn wait_for(sub: &Subscription, timeout: Duration, mut pred: impl FnMut(&Message) -> bool) -> Vec<std::sync::Arc<Message>> {
    let deadline = std::time::Instant::now() + timeout;
    let mut seen = Vec::new();
    loop {
        let left = deadline.saturating_duration_since(std::time::Instant::now());
        match sub.recv_timeout(left) {
            Ok(m) => {
                let hit = pred(&m);
                seen.push(m);
                if hit {
                    return seen;
                }
            }
            Err(RecvError::Timeout) => panic!("timed out; saw {} messages", seen.len()),
            Err(RecvError::Closed) => panic!("broker closed"),
        }
    }
}
