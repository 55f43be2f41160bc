use serde::{Deserialize, Serialize};

use super::PoseMapError;
use crate::skeleton::NormalizedArmVector;
use crate::Vec3;

/// Hand-tuned linear retargeting: per-axis gain `omega`, offset `delta` and
/// a mirroring sign `eta` applied to the two horizontal robot axes.
///
/// The robot basis is taken as identity, so outputs are directly in the
/// robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAffine", into = "RawAffine")]
pub struct AffineMapParams {
    omega: Vec3,
    delta: Vec3,
    eta: i8,
}

#[derive(Serialize, Deserialize)]
struct RawAffine {
    omega: [f64; 3],
    delta: [f64; 3],
    eta: i8,
}

impl TryFrom<RawAffine> for AffineMapParams {
    type Error = PoseMapError;

    fn try_from(r: RawAffine) -> Result<Self, PoseMapError> {
        AffineMapParams::new(r.omega.into(), r.delta.into(), r.eta)
    }
}

impl From<AffineMapParams> for RawAffine {
    fn from(p: AffineMapParams) -> Self {
        RawAffine {
            omega: p.omega.into(),
            delta: p.delta.into(),
            eta: p.eta,
        }
    }
}

impl AffineMapParams {
    pub fn new(omega: Vec3, delta: Vec3, eta: i8) -> Result<Self, PoseMapError> {
        if eta != 1 && eta != -1 {
            return Err(PoseMapError::InvalidParams(format!("eta must be +1 or -1, got {eta}")));
        }
        if omega.iter().any(|w| *w == 0.0 || !w.is_finite()) {
            return Err(PoseMapError::InvalidParams("omega components must be finite and nonzero".into()));
        }
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(PoseMapError::InvalidParams("delta must be finite".into()));
        }
        Ok(AffineMapParams { omega, delta, eta })
    }

    pub fn omega(&self) -> Vec3 {
        self.omega
    }

    pub fn delta(&self) -> Vec3 {
        self.delta
    }

    pub fn eta(&self) -> i8 {
        self.eta
    }
}

/// Robot x follows the torso normal, robot y the torso horizontal and robot
/// z the torso vertical.
pub fn affine_map(u: &NormalizedArmVector, p: &AffineMapParams) -> Vec3 {
    let eta = f64::from(p.eta);
    let u = u.0;
    Vec3::new(
        eta * p.omega.x * u.z + p.delta.x,
        eta * p.omega.y * u.x + p.delta.y,
        p.omega.z * u.y + p.delta.z,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_gain(eta: i8) -> AffineMapParams {
        AffineMapParams::new(Vec3::new(1.0, 1.0, 1.0), Vec3::zeros(), eta).unwrap()
    }

    #[test]
    fn permutes_axes() {
        let u = NormalizedArmVector(Vec3::new(0.2, 0.3, 0.5));
        assert_eq!(affine_map(&u, &unit_gain(1)), Vec3::new(0.5, 0.2, 0.3));
        assert_eq!(affine_map(&u, &unit_gain(-1)), Vec3::new(-0.5, -0.2, 0.3));
    }

    #[test]
    fn zero_input_yields_offset() {
        let p = AffineMapParams::new(Vec3::new(0.4, -0.2, 3.0), Vec3::new(0.3, 0.1, 0.2), -1).unwrap();
        assert_eq!(affine_map(&NormalizedArmVector(Vec3::zeros()), &p), p.delta());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(AffineMapParams::new(Vec3::new(1.0, 1.0, 1.0), Vec3::zeros(), 0).is_err());
        assert!(AffineMapParams::new(Vec3::new(1.0, 0.0, 1.0), Vec3::zeros(), 1).is_err());
        let json = r#"{"omega":[1,1,1],"delta":[0,0,0],"eta":2}"#;
        assert!(serde_json::from_str::<AffineMapParams>(json).is_err());
    }

    proptest! {
        #[test]
        fn eta_negates_horizontal_outputs(
            u in prop::array::uniform3(-1.0f64..1.0),
            w in prop::array::uniform3(0.05f64..2.0),
        ) {
            let u = NormalizedArmVector(u.into());
            let plus = AffineMapParams::new(w.into(), Vec3::zeros(), 1).unwrap();
            let minus = AffineMapParams::new(w.into(), Vec3::zeros(), -1).unwrap();
            let a = affine_map(&u, &plus);
            let b = affine_map(&u, &minus);
            prop_assert_eq!(b, Vec3::new(-a.x, -a.y, a.z));
        }
    }
}
