use proptest::prelude::*;
use rand::Rng;
use retarget_core::pose_map::{bending_energy, tps_eval, tps_fit, tps_gradient, PoseMapError, TpsParams};
use retarget_core::Vec3;
use retarget_testkit::{gen, oracle, rng};

fn d_rows(p: &TpsParams) -> [[f64; 3]; 4] {
    let a = p.affine();
    std::array::from_fn(|i| [a[(i, 0)], a[(i, 1)], a[(i, 2)]])
}

fn random_instance(seed: u64, m: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut r = rng(seed);
    let xs = gen::control_points(&mut r, m, 0.5);
    let ys = (0..m).map(|_| gen::uniform_v3(&mut r, -0.5, 0.5)).collect();
    (xs, ys)
}

#[test]
fn interpolates_and_annihilates_polynomials() {
    for seed in 0..40 {
        let m = 5 + (seed as usize % 28);
        let (xs, ys) = random_instance(seed, m);
        let p = tps_fit(&xs, &ys, 0.0).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((tps_eval(x, &p) - y).amax() < 1e-7, "seed {seed}");
        }
        assert!(p.side_condition_residual() < 1e-9, "seed {seed}");
    }
}

#[test]
fn matches_direct_summation_far_from_data() {
    let (xs, ys) = random_instance(7, 16);
    let p = tps_fit(&xs, &ys, 0.0).unwrap();
    let d = d_rows(&p);
    let mut r = rng(70);
    for _ in 0..50 {
        let x = gen::unit_v3(&mut r) * r.random_range(5.0..500.0);
        let got = tps_eval(&x, &p);
        let want = oracle::radial_eval(&x, &xs, p.warp(), &d);
        assert!(got.iter().all(|c| c.is_finite()));
        assert!((got - want).amax() <= 1e-9 * want.amax().max(1.0));
    }
}

#[test]
fn affine_targets_give_zero_warp() {
    let mut r = rng(11);
    for _ in 0..20 {
        let xs = gen::control_points(&mut r, 10, 0.5);
        let (a, b) = gen::affine(&mut r);
        let ys: Vec<Vec3> = xs.iter().map(|x| a * x + b).collect();
        let p = tps_fit(&xs, &ys, 0.0).unwrap();
        assert!(p.warp_max_abs() < 1e-8);
        let lin = p.affine().fixed_rows::<3>(0).transpose();
        assert!((lin - a).amax() < 1e-8);
        for k in 0..3 {
            assert!((p.affine()[(3, k)] - b[k]).abs() < 1e-8);
        }
        assert!(bending_energy(&p) < 1e-12);
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let mut r = rng(21);
    for seed in 0..10 {
        let (xs, ys) = random_instance(100 + seed, 12);
        let p = tps_fit(&xs, &ys, 0.0).unwrap();
        for _ in 0..20 {
            let x = gen::uniform_v3(&mut r, -0.7, 0.7);
            if xs.iter().any(|c| (c - x).norm() < 1e-2) {
                continue;
            }
            let fd = oracle::fd_jacobian(|q| tps_eval(q, &p), &x, 1e-5);
            let an = tps_gradient(&x, &p).unwrap();
            assert!((fd - an).amax() < 1e-4);
        }
    }
    let (xs, ys) = random_instance(5, 8);
    let p = tps_fit(&xs, &ys, 0.0).unwrap();
    assert_eq!(tps_gradient(&xs[1], &p), Err(PoseMapError::AtControlPoint(1)));
}

#[test]
fn energy_is_the_constrained_minimum() {
    let mut r = rng(31);
    for seed in 0..20 {
        let m = 5 + seed as usize % 4;
        let (xs, ys) = random_instance(200 + seed, m);
        let aux: Vec<Vec3> = (0..4).map(|_| gen::uniform_v3(&mut r, -0.5, 0.5)).collect();
        let p = tps_fit(&xs, &ys, 0.0).unwrap();
        let e = bending_energy(&p);
        let prog = oracle::EnergyProgram::new(&xs, &ys, &aux);
        let min = prog.minimum();
        assert!((e - min).abs() <= 1e-6 * min.abs().max(1e-12), "seed {seed}: {e} vs {min}");
        for _ in 0..5 {
            assert!(e <= prog.perturbed(&mut r, 0.5) + 1e-8);
        }
    }
}

#[test]
fn energy_scales_quadratically() {
    let (xs, ys) = random_instance(41, 9);
    let e = bending_energy(&tps_fit(&xs, &ys, 0.0).unwrap());
    for s in [0.5, 2.0, 3.7] {
        let scaled: Vec<Vec3> = ys.iter().map(|y| y * s).collect();
        let es = bending_energy(&tps_fit(&xs, &scaled, 0.0).unwrap());
        assert!((es - s * s * e).abs() <= 1e-9 * es);
    }
}

#[test]
fn regularization_relaxes_interpolation() {
    let (xs, ys) = random_instance(51, 16);
    let exact = tps_fit(&xs, &ys, 0.0).unwrap();
    let smooth = tps_fit(&xs, &ys, 0.5).unwrap();
    assert!(bending_energy(&smooth) < bending_energy(&exact));
    let miss = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (tps_eval(x, &smooth) - y).norm())
        .fold(0.0, f64::max);
    assert!(miss > 1e-6);
    assert!(smooth.side_condition_residual() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_motion_of_targets_commutes_with_fit(seed in 0u64..10_000) {
        let (xs, ys) = random_instance(seed, 8);
        let mut r = rng(seed ^ 0xabc);
        let (rot, t) = gen::rigid(&mut r, 1.0);
        let p = tps_fit(&xs, &ys, 0.0).unwrap();
        let moved: Vec<Vec3> = ys.iter().map(|y| rot * y + t).collect();
        let q = tps_fit(&xs, &moved, 0.0).unwrap();
        let probe = gen::uniform_v3(&mut r, -0.6, 0.6);
        prop_assert!((rot * tps_eval(&probe, &p) + t - tps_eval(&probe, &q)).amax() < 1e-8);
        prop_assert!((bending_energy(&p) - bending_energy(&q)).abs() <= 1e-8 * bending_energy(&p).max(1e-9));
    }
}
