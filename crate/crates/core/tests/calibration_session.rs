mod common;

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use retarget_core::calibration::{
    default_keypose_set, fit_profile, load_profile, profile_from_str, profile_to_string, save_profile,
    CalibrationError, CalibrationProfile, CalibrationSession, CalibrationSettings, KeyposeSet, QualityIssue,
    SessionState,
};
use retarget_core::pose_map::{bending_energy, tps_eval};
use retarget_core::Vec3;
use retarget_testkit::rng;

fn keyposes() -> KeyposeSet {
    default_keypose_set(0.4, 0.15, 0.45, (-FRAC_PI_2, FRAC_PI_2)).unwrap()
}

/// Streams 60 frames per keypose through a fresh session.
fn run_session(arms: &[Vec3], noise: f64, seed: u64) -> CalibrationProfile {
    let mut r = rng(seed);
    let mut session = CalibrationSession::new(keyposes(), CalibrationSettings::default());
    session.start();
    let mut t = 0.0;
    for (i, arm) in arms.iter().enumerate() {
        assert_eq!(session.current_index(), i);
        let mut finalized = None;
        for _ in 0..60 {
            let s = common::user_with_arm(*arm, t, |_| {
                Vec3::new(r.random_range(-noise..=noise), r.random_range(-noise..=noise), r.random_range(-noise..=noise))
            });
            t += 1.0 / 30.0;
            finalized = session.push_sample(s).unwrap();
        }
        assert!(finalized.is_some(), "keypose {i} not finalized after 60 frames");
    }
    assert_eq!(session.state(), SessionState::Done);
    session.into_profile("tester", "2024-01-01T00:00:00Z").unwrap()
}

#[test]
fn scaled_affine_session_is_accepted() {
    let y = keyposes().targets().to_vec();
    let profile = run_session(&common::scaled_arms(&y, 0.5), 0.0, 1);
    assert!(profile.quality.passed, "{:?}", profile.quality.issues);
    // elbow sits 5 cm off the shoulder-hand midpoint
    let half = profile.x[0].0.norm() / 2.0;
    assert!((profile.arm_length - 2.0 * half.hypot(0.05)).abs() < 1e-12);
    let fitted = fit_profile(profile).unwrap();
    let tps = fitted.tps.as_ref().unwrap();
    for (x, y) in fitted.x.iter().zip(&fitted.y) {
        assert!((tps_eval(&x.0, tps) - y).norm() < 1e-7);
    }
    assert!(tps.warp_max_abs() < 1e-8);
    assert!(bending_energy(tps) < 1e-12);
}

#[test]
fn noisy_session_still_interpolates() {
    let y = keyposes().targets().to_vec();
    let fitted = fit_profile(run_session(&common::scaled_arms(&y, 0.6), 0.01, 2)).unwrap();
    let tps = fitted.tps.as_ref().unwrap();
    for (x, y) in fitted.x.iter().zip(&fitted.y) {
        assert!((tps_eval(&x.0, tps) - y).norm() < 1e-7);
    }
    assert!(tps.side_condition_residual() < 1e-9);
}

#[test]
fn duplicate_keypose_is_rejected() {
    let y = keyposes().targets().to_vec();
    let mut arms = common::scaled_arms(&y, 0.5);
    arms[9] = arms[8];
    let profile = run_session(&arms, 0.0, 3);
    assert!(!profile.quality.passed);
    assert!(profile
        .quality
        .issues
        .iter()
        .any(|i| matches!(i, QualityIssue::TooClose { i: 8, j: 9, .. })));
    match fit_profile(profile) {
        Err(CalibrationError::QualityRejected(issues)) => {
            assert!(issues.iter().any(|i| i.to_string().starts_with("TooClose")));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn identical_streams_give_identical_profiles() {
    let y = keyposes().targets().to_vec();
    let a = fit_profile(run_session(&common::scaled_arms(&y, 0.5), 0.005, 9)).unwrap();
    let b = fit_profile(run_session(&common::scaled_arms(&y, 0.5), 0.005, 9)).unwrap();
    assert_eq!(profile_to_string(&a), profile_to_string(&b));
}

#[test]
fn profile_file_round_trip_and_corruption() {
    let y = keyposes().targets().to_vec();
    let p = fit_profile(run_session(&common::scaled_arms(&y, 0.5), 0.005, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tester.rtkprofile");
    save_profile(&p, &path).unwrap();
    assert_eq!(load_profile(&path).unwrap(), p);

    let text = std::fs::read_to_string(&path).unwrap();
    assert!(matches!(
        profile_from_str(&text[..text.len() / 2]),
        Err(CalibrationError::MalformedProfile(_))
    ));
    let bumped = text.replacen("\"version\": 1", "\"version\": 7", 1);
    match profile_from_str(&bumped) {
        Err(CalibrationError::MalformedProfile(reason)) => assert!(reason.contains("version")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        load_profile(&dir.path().join("missing.rtkprofile")),
        Err(CalibrationError::Io(_))
    ));
}

#[test]
fn short_window_is_insufficient() {
    let mut session = CalibrationSession::new(keyposes(), CalibrationSettings::default());
    session.start();
    let samples: Vec<_> = (0..10).map(|k| common::user_with_arm(Vec3::new(0.1, 0.1, 0.4), k as f64, |_| Vec3::zeros())).collect();
    assert!(matches!(
        session.record_keypose(&samples),
        Err(CalibrationError::InsufficientSamples { got: 10, needed: 60 })
    ));
}
