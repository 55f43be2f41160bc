//! Arm vector to gripper position maps.

mod affine;
mod tps;

pub use affine::{affine_map, AffineMapParams};
pub use tps::{bending_energy, tps_eval, tps_fit, tps_gradient, Kernel, TpsParams, MAX_CONDITION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{ArmVector, NormalizedArmVector};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseMapError {
    #[error("need at least {needed} control points, got {got}")]
    TooFewPoints { got: usize, needed: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("gradient undefined at control point {0}")]
    AtControlPoint(usize),
    #[error("{map} map expects {expected} arm vectors")]
    WrongInputKind {
        map: &'static str,
        expected: &'static str,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Either of the two supported mappings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoseMap {
    Affine(AffineMapParams),
    Tps(TpsParams),
}

/// Arm input handed to [`map_pose`]. The affine map consumes normalized
/// vectors; the spline is trained on raw shoulder-frame vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmInput {
    Raw(ArmVector),
    Normalized(NormalizedArmVector),
}

pub fn map_pose(input: ArmInput, map: &PoseMap) -> Result<Vec3, PoseMapError> {
    match (map, input) {
        (PoseMap::Affine(p), ArmInput::Normalized(u)) => Ok(affine_map(&u, p)),
        (PoseMap::Tps(p), ArmInput::Raw(u)) => Ok(tps_eval(&u.0, p)),
        (PoseMap::Affine(_), ArmInput::Raw(_)) => Err(PoseMapError::WrongInputKind {
            map: "affine",
            expected: "normalized",
        }),
        (PoseMap::Tps(_), ArmInput::Normalized(_)) => Err(PoseMapError::WrongInputKind {
            map: "tps",
            expected: "unnormalized",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch() {
        let affine = PoseMap::Affine(
            AffineMapParams::new(Vec3::new(0.3, 0.3, 0.3), Vec3::new(0.3, 0.0, 0.3), -1).unwrap(),
        );
        let zero = ArmInput::Normalized(NormalizedArmVector(Vec3::zeros()));
        assert_eq!(map_pose(zero, &affine).unwrap(), Vec3::new(0.3, 0.0, 0.3));
        assert!(matches!(
            map_pose(ArmInput::Raw(ArmVector(Vec3::zeros())), &affine),
            Err(PoseMapError::WrongInputKind { .. })
        ));

        let xs: Vec<Vec3> = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
        .iter()
        .map(|p| Vec3::from(*p))
        .collect();
        let ys: Vec<Vec3> = xs.iter().map(|x| x * 0.5 + Vec3::new(0.1, 0.2, 0.3)).collect();
        let tps = PoseMap::Tps(tps_fit(&xs, &ys, 0.0).unwrap());
        for (x, y) in xs.iter().zip(&ys) {
            let got = map_pose(ArmInput::Raw(ArmVector(*x)), &tps).unwrap();
            assert!((got - y).amax() < 1e-9);
        }
        assert!(matches!(map_pose(zero, &tps), Err(PoseMapError::WrongInputKind { .. })));
    }
}
