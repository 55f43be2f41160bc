//! Random instance generators.

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::Rng;

use crate::V3;

pub fn uniform_v3(rng: &mut impl Rng, lo: f64, hi: f64) -> V3 {
    V3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

pub fn unit_v3(rng: &mut impl Rng) -> V3 {
    loop {
        let v = uniform_v3(rng, -1.0, 1.0);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Smallest pairwise distance in `pts`.
pub fn min_separation(pts: &[V3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.min((pts[i] - pts[j]).norm());
        }
    }
    best
}

/// Smallest singular value of the centered point cloud, a measure of how far
/// the points are from lying in a common plane.
pub fn spread(pts: &[V3]) -> f64 {
    let mean = pts.iter().sum::<V3>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov.symmetric_eigenvalues().min().max(0.0).sqrt()
}

/// `m` well-separated, clearly non-coplanar points in a cube of half-width
/// `half` — the kind of control set a calibration produces.
pub fn control_points(rng: &mut impl Rng, m: usize, half: f64) -> Vec<V3> {
    loop {
        let pts: Vec<V3> = (0..m).map(|_| uniform_v3(rng, -half, half)).collect();
        if min_separation(&pts) > 0.05 * half && spread(&pts) > 0.3 * half {
            return pts;
        }
    }
}

/// Random invertible affine map `x ↦ A x + b` with condition number below 20.
pub fn affine(rng: &mut impl Rng) -> (Matrix3<f64>, V3) {
    loop {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let sv = a.singular_values();
        if sv.min() > 0.05 && sv.max() / sv.min() < 20.0 {
            return (a, uniform_v3(rng, -0.5, 0.5));
        }
    }
}

/// Uniformly random rotation plus a translation in `[-t, t]³`.
pub fn rigid(rng: &mut impl Rng, t: f64) -> (Matrix3<f64>, V3) {
    let axis = Unit::new_normalize(unit_v3(rng));
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    (*Rotation3::from_axis_angle(&axis, angle).matrix(), uniform_v3(rng, -t, t))
}

/// Joint positions of a synthetic upright user (camera frame, meters).
#[derive(Debug, Clone, Copy)]
pub struct Body {
    pub spine_center: V3,
    pub shoulder_center: V3,
    pub right_shoulder: V3,
    pub left_shoulder: V3,
    pub right_elbow: V3,
    pub right_hand: V3,
}

impl Body {
    pub fn map(&self, mut f: impl FnMut(V3) -> V3) -> Body {
        Body {
            spine_center: f(self.spine_center),
            shoulder_center: f(self.shoulder_center),
            right_shoulder: f(self.right_shoulder),
            left_shoulder: f(self.left_shoulder),
            right_elbow: f(self.right_elbow),
            right_hand: f(self.right_hand),
        }
    }
}

/// A standing user with the shoulder line exactly perpendicular to the spine,
/// randomly placed and turned about the vertical axis, arm in a random pose.
pub fn upright_body(rng: &mut impl Rng) -> Body {
    let spine = V3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2), rng.random_range(1.5..3.0));
    let torso = rng.random_range(0.3..0.6);
    let half_width = rng.random_range(0.12..0.25);
    let yaw = rng.random_range(-0.8..0.8);
    let h = V3::new(f64::cos(yaw), 0.0, f64::sin(yaw));
    let shoulder_center = spine + V3::new(0.0, torso, 0.0);
    let upper = rng.random_range(0.2..0.35);
    let fore = rng.random_range(0.2..0.35);
    let right_shoulder = shoulder_center - h * half_width;
    let right_elbow = right_shoulder + unit_v3(rng) * upper;
    Body {
        spine_center: spine,
        shoulder_center,
        right_shoulder,
        left_shoulder: shoulder_center + h * half_width,
        right_elbow,
        right_hand: right_elbow + unit_v3(rng) * fore,
    }
}

/// One sample of a synthetic gripper trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub pos: V3,
    pub closed: bool,
}

/// Minimum-jerk blend from `a` to `b`, `s ∈ [0, 1]`.
pub fn min_jerk(a: V3, b: V3, s: f64) -> V3 {
    let s = s.clamp(0.0, 1.0);
    a + (b - a) * (10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5))
}

/// Pick-and-place sampled at `rate` Hz: rest, reach the object, rest, close,
/// rest, carry it to the drop point, rest, open, rest. Four atomic movements.
pub fn pick_and_place(rate: f64, start: V3, pick: V3, place: V3) -> Vec<Waypoint> {
    const REST: f64 = 0.6;
    const MOVE: f64 = 1.5;
    let t_pick = REST;
    let t_close = t_pick + MOVE + REST;
    let t_carry = t_close + REST;
    let t_open = t_carry + MOVE + REST;
    let end = t_open + REST;
    let n = (end * rate).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / rate;
            let pos = if t < t_carry {
                min_jerk(start, pick, (t - t_pick) / MOVE)
            } else {
                min_jerk(pick, place, (t - t_carry) / MOVE)
            };
            Waypoint {
                t,
                pos,
                closed: t >= t_close && t < t_open,
            }
        })
        .collect()
}

/// Row-major depth frame (meters) of a flat background at `background` with
/// a disk-shaped hand of `radius` pixels centered at `(cx, cy)` whose surface
/// ramps from `hand_depth` at the center to `hand_depth + 0.05` at the rim.
pub fn hand_scene(
    width: usize,
    height: usize,
    (cx, cy): (usize, usize),
    radius: f64,
    hand_depth: f64,
    background: f64,
) -> Vec<f64> {
    let mut data = vec![background; width * height];
    for y in 0..height {
        for x in 0..width {
            let d = (x as f64 - cx as f64).hypot(y as f64 - cy as f64);
            if d <= radius {
                data[y * width + x] = hand_depth + 0.05 * d / radius.max(1.0);
            }
        }
    }
    data
}
