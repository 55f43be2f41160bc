//! Reference computations.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;

use crate::V3;

/// Central-difference Jacobian, `J[(k, j)] = ∂f_k / ∂x_j`.
pub fn fd_jacobian(f: impl Fn(&V3) -> V3, x: &V3, h: f64) -> Matrix3<f64> {
    let mut jac = Matrix3::zeros();
    for j in 0..3 {
        let mut e = V3::zeros();
        e[j] = h;
        let d = (f(&(x + e)) - f(&(x - e))) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// Spline value by direct summation: `[x 1]·D + Σ wᵢ ‖x − cᵢ‖`, with `D`
/// given as four rows (the last one is the translation).
pub fn radial_eval(x: &V3, centers: &[V3], warp: &[V3], d_rows: &[[f64; 3]; 4]) -> V3 {
    let mut out = V3::new(d_rows[3][0], d_rows[3][1], d_rows[3][2]);
    for (i, row) in d_rows.iter().take(3).enumerate() {
        out += V3::new(row[0], row[1], row[2]) * x[i];
    }
    for (c, w) in centers.iter().zip(warp) {
        out += w * (x - c).norm();
    }
    out
}

/// Equality-constrained quadratic program behind the spline energy.
///
/// Functions of the form `[x 1]·D + Σ_c w_c ‖x − c‖` are considered over a
/// center set made of the data sites *plus* the auxiliary `aux` centers. The
/// bending energy of such a function is `−Σ_k w_kᵀ K w_k` (the radial kernel
/// is conditionally negative definite, so this is nonnegative whenever the
/// weights annihilate affine functions). Minimizing it subject to
/// interpolation and the side conditions is solved with the null-space
/// method: a particular feasible point from the pseudo-inverse, a null-space
/// basis from a full SVD, and a reduced unconstrained quadratic.
///
/// The minimum is attained with zero weight on every auxiliary center, so it
/// must coincide with the energy of the closed-form interpolant.
pub struct EnergyProgram {
    q: DMatrix<f64>,
    particular: Vec<DVector<f64>>,
    null: DMatrix<f64>,
}

fn kernel_block(rows: &[V3], cols: &[V3]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| (rows[i] - cols[j]).norm())
}

impl EnergyProgram {
    pub fn new(xs: &[V3], ys: &[V3], aux: &[V3]) -> EnergyProgram {
        let m = xs.len();
        let centers: Vec<V3> = xs.iter().chain(aux).copied().collect();
        let nc = centers.len();
        let nv = nc + 4;

        // constraint matrix, padded with zero rows to square for a full SVD
        let mut a = DMatrix::zeros(nv, nv);
        a.view_mut((0, 0), (m, nc)).copy_from(&kernel_block(xs, &centers));
        for (i, x) in xs.iter().enumerate() {
            a[(i, nc)] = x.x;
            a[(i, nc + 1)] = x.y;
            a[(i, nc + 2)] = x.z;
            a[(i, nc + 3)] = 1.0;
        }
        for (j, c) in centers.iter().enumerate() {
            a[(m, j)] = c.x;
            a[(m + 1, j)] = c.y;
            a[(m + 2, j)] = c.z;
            a[(m + 3, j)] = 1.0;
        }

        let svd = a.clone().svd(true, true);
        let u = svd.u.as_ref().expect("u");
        let vt = svd.v_t.as_ref().expect("v_t");
        let smax = svd.singular_values.max();
        let tol = smax * 1e-12 * nv as f64;
        let mut order: Vec<usize> = (0..nv).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
        assert_eq!(rank, m + 4, "constraints must be independent");

        let null = DMatrix::from_fn(nv, nv - rank, |r, c| vt[(order[rank + c], r)]);

        let particular = (0..3)
            .map(|k| {
                let mut b = DVector::zeros(nv);
                for (i, y) in ys.iter().enumerate() {
                    b[i] = y[k];
                }
                // z0 = V Σ⁺ Uᵀ b
                let mut z = DVector::zeros(nv);
                for &s in order.iter().take(rank) {
                    let coef = u.column(s).dot(&b) / svd.singular_values[s];
                    z += vt.row(s).transpose() * coef;
                }
                z
            })
            .collect();

        let mut q = DMatrix::zeros(nv, nv);
        q.view_mut((0, 0), (nc, nc)).copy_from(&(-kernel_block(&centers, &centers)));
        EnergyProgram { q, particular, null }
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        (z.transpose() * &self.q * z)[(0, 0)]
    }

    /// Minimum energy over all feasible weight vectors.
    pub fn minimum(&self) -> f64 {
        if self.null.ncols() == 0 {
            return self.particular.iter().map(|z| self.objective(z)).sum();
        }
        let h = self.null.transpose() * &self.q * &self.null;
        let chol = h.clone().cholesky().expect("reduced Hessian is positive definite");
        self.particular
            .iter()
            .map(|z0| {
                let g = self.null.transpose() * &self.q * z0;
                let t = -chol.solve(&g);
                self.objective(&(z0 + &self.null * t))
            })
            .sum()
    }

    /// Energy of a random feasible point (the minimizer moved by `scale`
    /// along a random null-space direction per output coordinate).
    pub fn perturbed(&self, rng: &mut impl Rng, scale: f64) -> f64 {
        let k = self.null.ncols();
        let h = self.null.transpose() * &self.q * &self.null;
        let chol = h.clone().cholesky().expect("reduced Hessian is positive definite");
        self.particular
            .iter()
            .map(|z0| {
                let g = self.null.transpose() * &self.q * z0;
                let mut t = -chol.solve(&g);
                for i in 0..k {
                    t[i] += rng.random_range(-scale..scale);
                }
                self.objective(&(z0 + &self.null * t))
            })
            .sum()
    }
}

/// Nearest point of the annular sector `r ∈ radius, z ∈ height,
/// θ ∈ sector` to `p`, found by repeatedly refining a 41³ grid in
/// cylindrical coordinates around the best sample.
///
/// The distance is flat at its minimum, so the location is only resolved to
/// roughly `sqrt(ε)·‖p − q‖` (≈1e-8 m at workspace scale).
pub fn grid_nearest(p: &V3, radius: (f64, f64), height: (f64, f64), sector: (f64, f64)) -> V3 {
    const N: usize = 41;
    let mut lo = [radius.0, sector.0, height.0];
    let mut hi = [radius.1, sector.1, height.1];
    let full = [(radius.0, radius.1), (sector.0, sector.1), (height.0, height.1)];
    let to_point = |c: [f64; 3]| V3::new(c[0] * c[1].cos(), c[0] * c[1].sin(), c[2]);
    let mut best = [lo[0], lo[1], lo[2]];
    for _ in 0..12 {
        let step: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]) / (N - 1) as f64).collect();
        let mut best_d = f64::INFINITY;
        for i in 0..N {
            for j in 0..N {
                for k in 0..N {
                    let c = [
                        lo[0] + step[0] * i as f64,
                        lo[1] + step[1] * j as f64,
                        lo[2] + step[2] * k as f64,
                    ];
                    let d = (to_point(c) - p).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
            }
        }
        for a in 0..3 {
            lo[a] = (best[a] - 2.0 * step[a]).max(full[a].0);
            hi[a] = (best[a] + 2.0 * step[a]).min(full[a].1);
        }
    }
    to_point(best)
}

/// Coordinate-wise median by sorting; even counts average the middle pair.
pub fn sorted_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_linear_map_is_exact() {
        let a = Matrix3::new(1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 4.0, 0.0, -2.0);
        let j = fd_jacobian(|x| a * x, &V3::new(0.3, -0.2, 0.7), 1e-5);
        assert!((j - a).amax() < 1e-9);
    }

    #[test]
    fn grid_finds_known_projection() {
        // outside radially only: nearest point is on the outer wall at the same angle
        let p = V3::new(0.6, 0.0, 0.3);
        let q = grid_nearest(&p, (0.15, 0.45), (0.1, 0.55), (-1.5, 1.5));
        assert!((q - V3::new(0.45, 0.0, 0.3)).norm() < 1e-7, "{q:?}");
    }

    #[test]
    fn energy_of_affine_data_is_zero() {
        let xs = vec![
            V3::new(0.0, 0.0, 0.0),
            V3::new(1.0, 0.0, 0.0),
            V3::new(0.0, 1.0, 0.0),
            V3::new(0.0, 0.0, 1.0),
            V3::new(1.0, 1.0, 1.0),
            V3::new(0.3, 0.8, 0.1),
        ];
        let ys: Vec<V3> = xs.iter().map(|x| x * 2.0 + V3::new(0.1, 0.2, 0.3)).collect();
        let aux = [V3::new(0.5, 0.5, 0.2), V3::new(0.1, 0.9, 0.7)];
        let prog = EnergyProgram::new(&xs, &ys, &aux);
        assert!(prog.minimum().abs() < 1e-10);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(sorted_median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(sorted_median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
