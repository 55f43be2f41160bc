//! Thin-plate spline (polyharmonic) interpolation in 3D.
//!
//! The fitted map is `f(x) = [x, 1]·D + Σᵢ wᵢ U(‖x − xᵢ‖)` where `D` is a
//! 4 × 3 affine block and the warp rows `wᵢ` satisfy `Mᵗw = 0` with `M` the
//! homogeneous control points. `w` and `D` come from one dense solve of
//!
//! ```text
//! | K + λI  M | | w |   | Y |
//! | Mᵗ      0 | | D | = | 0 |
//! ```
//!
//! shared across the three output coordinates.

use nalgebra::{DMatrix, Matrix3, Matrix4x3, Vector4};
use serde::{Deserialize, Serialize};

use super::PoseMapError;
use crate::Vec3;

/// Systems whose 1-norm condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

const MIN_POINTS: usize = 5;
const MIN_SEPARATION: f64 = 1e-9;

/// Radial kernel of the warp term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Kernel {
    /// `U(r) = r`, the biharmonic Green's function in three dimensions (up to
    /// a negative constant).
    #[default]
    #[serde(rename = "r")]
    Biharmonic,
}

impl Kernel {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            Kernel::Biharmonic => r,
        }
    }

    /// `U'(r) / r`, so that `∇ U(‖d‖) = d · radial_derivative_over_r(‖d‖)`.
    fn radial_derivative_over_r(self, r: f64) -> f64 {
        match self {
            Kernel::Biharmonic => 1.0 / r,
        }
    }

    /// Sign turning `wᵗKw` into a nonnegative energy. `U(r) = r` is
    /// conditionally negative definite on `Mᵗw = 0`.
    fn energy_sign(self) -> f64 {
        match self {
            Kernel::Biharmonic => -1.0,
        }
    }
}

/// Fitted spline parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTps", into = "RawTps")]
pub struct TpsParams {
    kernel: Kernel,
    lambda: f64,
    control_points: Vec<Vec3>,
    warp: Vec<Vec3>,
    affine: Matrix4x3<f64>,
}

impl TpsParams {
    /// Assembles parameters from their parts, checking shapes and the
    /// `Mᵗw = 0` side condition.
    pub fn from_parts(
        kernel: Kernel,
        lambda: f64,
        control_points: Vec<Vec3>,
        warp: Vec<Vec3>,
        affine: Matrix4x3<f64>,
    ) -> Result<Self, PoseMapError> {
        if control_points.len() != warp.len() {
            return Err(PoseMapError::InvalidParams(format!(
                "{} control points but {} warp rows",
                control_points.len(),
                warp.len()
            )));
        }
        if control_points.len() < MIN_POINTS {
            return Err(PoseMapError::TooFewPoints {
                got: control_points.len(),
                needed: MIN_POINTS,
            });
        }
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        if !(lambda.is_finite() && lambda >= 0.0)
            || !control_points.iter().all(finite)
            || !warp.iter().all(finite)
            || !affine.iter().all(|c| c.is_finite())
        {
            return Err(PoseMapError::InvalidParams("non-finite or negative entries".into()));
        }
        let p = TpsParams {
            kernel,
            lambda,
            control_points,
            warp,
            affine,
        };
        let scale: f64 = p
            .warp
            .iter()
            .zip(&p.control_points)
            .map(|(w, x)| w.amax() * x.amax().max(1.0))
            .sum();
        let residual = p.side_condition_residual();
        if residual > 1e-9 * scale.max(1.0) {
            return Err(PoseMapError::InvalidParams(format!(
                "warp violates the side condition (max |Mᵗw| = {residual:e})"
            )));
        }
        Ok(p)
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn warp(&self) -> &[Vec3] {
        &self.warp
    }

    /// Rows 0..3 multiply x, y, z; row 3 is the translation.
    pub fn affine(&self) -> &Matrix4x3<f64> {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.control_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control_points.is_empty()
    }

    /// Largest absolute entry of `Mᵗw` (4 × 3).
    pub fn side_condition_residual(&self) -> f64 {
        let mut acc = Matrix4x3::<f64>::zeros();
        for (x, w) in self.control_points.iter().zip(&self.warp) {
            acc += Vector4::new(x.x, x.y, x.z, 1.0) * w.transpose();
        }
        acc.amax()
    }

    /// Largest absolute warp coefficient.
    pub fn warp_max_abs(&self) -> f64 {
        self.warp.iter().map(|w| w.amax()).fold(0.0, f64::max)
    }
}

#[derive(Serialize, Deserialize)]
struct RawTps {
    kernel: Kernel,
    lambda: f64,
    m: usize,
    control_points: Vec<[f64; 3]>,
    warp: Vec<[f64; 3]>,
    affine: [[f64; 3]; 4],
}

impl TryFrom<RawTps> for TpsParams {
    type Error = PoseMapError;

    fn try_from(r: RawTps) -> Result<Self, PoseMapError> {
        if r.control_points.len() != r.m {
            return Err(PoseMapError::InvalidParams(format!(
                "m = {} but {} control points listed",
                r.m,
                r.control_points.len()
            )));
        }
        let affine = Matrix4x3::from_fn(|i, j| r.affine[i][j]);
        TpsParams::from_parts(
            r.kernel,
            r.lambda,
            r.control_points.into_iter().map(Vec3::from).collect(),
            r.warp.into_iter().map(Vec3::from).collect(),
            affine,
        )
    }
}

impl From<TpsParams> for RawTps {
    fn from(p: TpsParams) -> Self {
        let mut affine = [[0.0; 3]; 4];
        for (i, row) in affine.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = p.affine[(i, j)];
            }
        }
        RawTps {
            kernel: p.kernel,
            lambda: p.lambda,
            m: p.control_points.len(),
            control_points: p.control_points.iter().map(|v| (*v).into()).collect(),
            warp: p.warp.iter().map(|v| (*v).into()).collect(),
            affine,
        }
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Fits the spline taking `xs[i]` to `ys[i]`. With `lambda = 0` the result
/// interpolates exactly; `lambda > 0` trades exactness for smoothness.
pub fn tps_fit(xs: &[Vec3], ys: &[Vec3], lambda: f64) -> Result<TpsParams, PoseMapError> {
    tps_fit_with(Kernel::default(), xs, ys, lambda)
}

pub fn tps_fit_with(kernel: Kernel, xs: &[Vec3], ys: &[Vec3], lambda: f64) -> Result<TpsParams, PoseMapError> {
    let m = xs.len();
    if ys.len() != m {
        return Err(PoseMapError::InvalidParams(format!(
            "{m} source points but {} targets",
            ys.len()
        )));
    }
    if m < MIN_POINTS {
        return Err(PoseMapError::TooFewPoints { got: m, needed: MIN_POINTS });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(PoseMapError::InvalidParams(format!("lambda must be nonnegative, got {lambda}")));
    }
    if xs.iter().chain(ys).any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(PoseMapError::InvalidParams("non-finite point".into()));
    }
    for i in 0..m {
        for j in i + 1..m {
            if (xs[i] - xs[j]).norm() <= MIN_SEPARATION {
                return Err(PoseMapError::SingularSystem(format!(
                    "control points {i} and {j} coincide"
                )));
            }
        }
    }

    let n = m + 4;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DMatrix::<f64>::zeros(n, 3);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = kernel.eval((xs[i] - xs[j]).norm());
        }
        // Smoothing penalizes the energy, so the ridge term carries the
        // energy sign: K − λI for the conditionally negative definite U = r.
        a[(i, i)] += kernel.energy_sign() * lambda;
        let homogeneous = [xs[i].x, xs[i].y, xs[i].z, 1.0];
        for (k, v) in homogeneous.into_iter().enumerate() {
            a[(i, m + k)] = v;
            a[(m + k, i)] = v;
        }
        for k in 0..3 {
            b[(i, k)] = ys[i][k];
        }
    }

    let lu = a.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or_else(|| PoseMapError::SingularSystem("zero pivot".into()))?;
    let condition = one_norm(&a) * one_norm(&inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(PoseMapError::SingularSystem(format!(
            "condition estimate {condition:e} (coplanar or clustered control points)"
        )));
    }

    let mut solution = lu
        .solve(&b)
        .ok_or_else(|| PoseMapError::SingularSystem("zero pivot".into()))?;
    // One step of iterative refinement tightens the side condition.
    let residual = &b - &a * &solution;
    if let Some(correction) = lu.solve(&residual) {
        solution += correction;
    }

    let warp = (0..m)
        .map(|i| Vec3::new(solution[(i, 0)], solution[(i, 1)], solution[(i, 2)]))
        .collect();
    let affine = Matrix4x3::from_fn(|i, j| solution[(m + i, j)]);
    Ok(TpsParams {
        kernel,
        lambda,
        control_points: xs.to_vec(),
        warp,
        affine,
    })
}

pub fn tps_eval(x: &Vec3, p: &TpsParams) -> Vec3 {
    let mut out = p.affine.transpose() * Vector4::new(x.x, x.y, x.z, 1.0);
    for (c, w) in p.control_points.iter().zip(&p.warp) {
        out += w * p.kernel.eval((x - c).norm());
    }
    out
}

/// Jacobian `J[(k, j)] = ∂f_k / ∂x_j`.
pub fn tps_gradient(x: &Vec3, p: &TpsParams) -> Result<Matrix3<f64>, PoseMapError> {
    let mut jac: Matrix3<f64> = p.affine.fixed_rows::<3>(0).transpose().into_owned();
    for (i, (c, w)) in p.control_points.iter().zip(&p.warp).enumerate() {
        let d = x - c;
        let r = d.norm();
        if r <= MIN_SEPARATION {
            return Err(PoseMapError::AtControlPoint(i));
        }
        jac += w * d.transpose() * p.kernel.radial_derivative_over_r(r);
    }
    Ok(jac)
}

/// Discrete bending energy `Σ_k −w_kᵗ K w_k` over the three output
/// coordinates, with `K_ij = U(‖xᵢ − xⱼ‖)` (no regularization term).
/// Proportional to the integral of squared second derivatives; zero for
/// affine maps.
pub fn bending_energy(p: &TpsParams) -> f64 {
    let mut total = 0.0;
    for (i, (xi, wi)) in p.control_points.iter().zip(&p.warp).enumerate() {
        for (xj, wj) in p.control_points[i..].iter().zip(&p.warp[i..]).skip(1) {
            total += 2.0 * p.kernel.eval((xi - xj).norm()) * wi.dot(wj);
        }
        total += p.kernel.eval(0.0) * wi.dot(wi);
    }
    (p.kernel.energy_sign() * total).max(0.0)
}
