use super::*;
use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Oracle: project a random 3D point through both cameras of `pose`.
///
/// Points are drawn in the first camera frustum and rejected until they have
/// positive depth in both views, so the returned correspondence is exact by
/// construction.
pub(crate) fn exact_correspondence(
    pose: &Pose,
    rng: &mut ChaCha8Rng,
) -> (NormalizedPoint2, NormalizedPoint2) {
    loop {
        let z = rng.gen_range(3.0..9.0);
        let x = rng.gen_range(-0.5..0.5) * z;
        let y = rng.gen_range(-0.5..0.5) * z;
        let p = Vector3::new(x, y, z);
        let q = pose.transform(&p);
        if q.z <= 0.1 {
            continue;
        }
        let a = NormalizedPoint2::new(p.x / p.z, p.y / p.z).unwrap();
        let b = NormalizedPoint2::new(q.x / q.z, q.y / q.z).unwrap();
        return (a, b);
    }
}

pub(crate) fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Unit::new_normalize(Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ));
    let angle = rng.gen_range(0.01..0.5);
    let r = Rotation3::from_axis_angle(&axis, angle);
    let t = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.5..0.5),
    );
    if t.norm() < 1e-3 {
        return random_pose(rng);
    }
    Pose::new_normalized(*r.matrix(), t).unwrap()
}

fn essential_diff(a: &EssentialMatrix, b: &EssentialMatrix) -> f64 {
    let d1 = (a.matrix() - b.matrix()).norm();
    let d2 = (a.matrix() + b.matrix()).norm();
    d1.min(d2)
}

#[test]
fn essential_from_identity_rotation_z_translation() {
    let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let e = essential_from_pose(&pose);
    // [t]× for t = e_z is [[0,-1,0],[1,0,0],[0,0,0]]; Frobenius-normalized.
    let s = 1.0 / 2.0f64.sqrt();
    let expected = Matrix3::new(0.0, -s, 0.0, s, 0.0, 0.0, 0.0, 0.0, 0.0);
    let expected = EssentialMatrix::from_matrix(&expected).unwrap();
    assert!(essential_diff(&e, &expected) < 1e-12);
}

#[test]
fn essential_from_identity_rotation_x_translation() {
    let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let e = essential_from_pose(&pose);
    let s = 1.0 / 2.0f64.sqrt();
    let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -s, 0.0, s, 0.0);
    let expected = EssentialMatrix::from_matrix(&expected).unwrap();
    assert!(essential_diff(&e, &expected) < 1e-12);
}

#[test]
fn essential_satisfies_epipolar_constraint_on_exact_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pose = random_pose(&mut rng);
    let e = essential_from_pose(&pose);
    let mut max_residual = 0.0f64;
    for _ in 0..20 {
        let (x, xp) = exact_correspondence(&pose, &mut rng);
        let r = xp.homogeneous().dot(&(e.matrix() * x.homogeneous())).abs();
        max_residual = max_residual.max(r);
    }
    assert!(max_residual < 1e-12, "max residual {max_residual}");
}

#[test]
fn essential_projection_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let Ok(e1) = EssentialMatrix::from_matrix(&m) else {
            continue;
        };
        let e2 = EssentialMatrix::from_matrix(e1.matrix()).unwrap();
        assert!((e1.matrix() - e2.matrix()).norm() < 1e-12);
        assert!(e1.satisfies_invariants());
    }
}

#[test]
fn five_point_rejects_repeated_points() {
    let p = NormalizedPoint2::new(0.1, 0.2).unwrap();
    let q = NormalizedPoint2::new(0.3, -0.1).unwrap();
    let corr = [(p, q); 5];
    match five_point_solve(&corr) {
        Err(GeometryError::DegenerateConfiguration) => {}
        other => panic!("expected DegenerateConfiguration, got {other:?}"),
    }
}

#[test]
fn five_point_recovers_known_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let pose = random_pose(&mut rng);
        let gt = essential_from_pose(&pose);
        let corr: Vec<_> = (0..5).map(|_| exact_correspondence(&pose, &mut rng)).collect();
        let corr: [_; 5] = corr.try_into().unwrap();
        let solutions = five_point_solve(&corr).unwrap();
        assert!(solutions.len() <= 10);
        let best = solutions
            .iter()
            .map(|e| essential_diff(e, &gt))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "no solution close to ground truth: {best}");
        for e in &solutions {
            assert!(e.satisfies_invariants());
            let res = corr
                .iter()
                .map(|(a, b)| b.homogeneous().dot(&(e.matrix() * a.homogeneous())).abs())
                .fold(0.0f64, f64::max);
            assert!(res < 1e-6, "algebraic residual {res}");
        }
    }
}

#[test]
fn five_point_matches_closed_form_for_x_translation() {
    let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let corr: Vec<_> = (0..5).map(|_| exact_correspondence(&pose, &mut rng)).collect();
    let corr: [_; 5] = corr.try_into().unwrap();
    let s = 1.0 / 2.0f64.sqrt();
    let expected =
        EssentialMatrix::from_matrix(&Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -s, 0.0, s, 0.0))
            .unwrap();
    let solutions = five_point_solve(&corr).unwrap();
    let best = solutions
        .iter()
        .map(|e| essential_diff(e, &expected))
        .fold(f64::INFINITY, f64::min);
    assert!(best < 1e-6, "closed-form solution missing: {best}");
}

#[test]
fn decompose_round_trip_recovers_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..20 {
        let pose = random_pose(&mut rng);
        let e = essential_from_pose(&pose);
        let corr: Vec<_> = (0..10).map(|_| exact_correspondence(&pose, &mut rng)).collect();
        let recovered = decompose_essential(&e, &corr).unwrap();
        assert!(
            angular_pose_error(&recovered, &pose) < 1e-6,
            "pose error {}",
            angular_pose_error(&recovered, &pose)
        );
    }
}

#[test]
fn decompose_picks_forward_translation() {
    // Forward-translating camera, points in front: t must come out as
    // (0,0,1), not its negation.
    let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let e = essential_from_pose(&pose);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let corr: Vec<_> = (0..10).map(|_| exact_correspondence(&pose, &mut rng)).collect();
    let recovered = decompose_essential(&e, &corr).unwrap();
    assert!((recovered.translation() - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
}

#[test]
fn decompose_reports_cheirality_ambiguity() {
    // R = I, t = (0,0,-1): the pair x = (0.5, 0), x' = (-0.5, 0) satisfies the
    // epipolar constraint but corresponds to mixed-sign depths for (R, ±t)
    // and to parallel rays for the twisted pair, so no candidate gets
    // positive-depth support.
    let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -1.0)).unwrap();
    let e = essential_from_pose(&pose);
    let corr = vec![(
        NormalizedPoint2::new(0.5, 0.0).unwrap(),
        NormalizedPoint2::new(-0.5, 0.0).unwrap(),
    )];
    match decompose_essential(&e, &corr) {
        Err(GeometryError::CheiralityAmbiguous) => {}
        other => panic!("expected CheiralityAmbiguous, got {other:?}"),
    }
}

#[test]
fn triangulate_exact_point() {
    let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    // Point (0,0,5): projects to (0,0) in camera 1 and (1/5, 0) in camera 2.
    let x = NormalizedPoint2::new(0.0, 0.0).unwrap();
    let xp = NormalizedPoint2::new(0.2, 0.0).unwrap();
    let (p, depths) = triangulate(&pose, &x, &xp).unwrap();
    assert!((p - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-9);
    assert!((depths[0] - 5.0).abs() < 1e-9);
    assert!((depths[1] - 5.0).abs() < 1e-9);
}

#[test]
fn triangulate_rejects_parallel_rays() {
    let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let x = NormalizedPoint2::new(0.0, 0.0).unwrap();
    match triangulate(&pose, &x, &x) {
        Err(GeometryError::ParallelRays) => {}
        other => panic!("expected ParallelRays, got {other:?}"),
    }
}

#[test]
fn triangulate_random_scene_reprojects_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let pose = random_pose(&mut rng);
    let mut max_err = 0.0f64;
    for _ in 0..100 {
        let (x, xp) = exact_correspondence(&pose, &mut rng);
        let (p, depths) = triangulate(&pose, &x, &xp).unwrap();
        assert!(depths[0] > 0.0 && depths[1] > 0.0);
        let q = pose.transform(&p);
        let r1 = ((p.x / p.z - x.u).powi(2) + (p.y / p.z - x.v).powi(2)).sqrt();
        let r2 = ((q.x / q.z - xp.u).powi(2) + (q.y / q.z - xp.v).powi(2)).sqrt();
        max_err = max_err.max(r1).max(r2);
    }
    assert!(max_err < 1e-9, "max reprojection error {max_err}");
}

#[test]
fn epipolar_distance_zero_on_exact_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let pose = random_pose(&mut rng);
    let e = essential_from_pose(&pose);
    for _ in 0..20 {
        let (x, xp) = exact_correspondence(&pose, &mut rng);
        let d = epipolar_line_distance(&e, &x, &xp).unwrap();
        assert!(d < 1e-12, "distance {d}");
    }
}

#[test]
fn epipolar_distance_matches_hand_computed_offset() {
    // E for t = (1,0,0), R = I gives horizontal epipolar lines; a pure
    // v-offset of 0.1 is exactly the distance.
    let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let e = essential_from_pose(&pose);
    let x = NormalizedPoint2::new(0.0, 0.0).unwrap();
    let xp = NormalizedPoint2::new(0.0, 0.1).unwrap();
    let d = epipolar_line_distance(&e, &x, &xp).unwrap();
    assert!((d - 0.1).abs() < 1e-12, "distance {d}");
}

#[test]
fn epipolar_distance_matches_line_algebra_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let Ok(e) = EssentialMatrix::from_matrix(&m) else {
            continue;
        };
        let x = NormalizedPoint2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).unwrap();
        let xp = NormalizedPoint2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).unwrap();
        // Independent oracle: explicit point-line distance |ax+by+c|/√(a²+b²)
        // for both directions.
        let l2 = e.matrix() * x.homogeneous();
        let l1 = e.matrix().transpose() * xp.homogeneous();
        let d2 = (l2.x * xp.u + l2.y * xp.v + l2.z).abs() / (l2.x * l2.x + l2.y * l2.y).sqrt();
        let d1 = (l1.x * x.u + l1.y * x.v + l1.z).abs() / (l1.x * l1.x + l1.y * l1.y).sqrt();
        let expected = d1.max(d2);
        let got = epipolar_line_distance(&e, &x, &xp).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }
}

#[test]
fn epipolar_distance_symmetric_under_view_swap() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for _ in 0..30 {
        let pose = random_pose(&mut rng);
        let e = essential_from_pose(&pose);
        let x = NormalizedPoint2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).unwrap();
        let xp = NormalizedPoint2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).unwrap();
        let swapped = EssentialMatrix::from_matrix(&e.matrix().transpose()).unwrap();
        let a = epipolar_line_distance(&e, &x, &xp).unwrap();
        let b = epipolar_line_distance(&swapped, &xp, &x).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn angular_error_zero_for_identical_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let pose = random_pose(&mut rng);
    assert_eq!(angular_pose_error(&pose, &pose), 0.0);
}

#[test]
fn angular_error_ten_degree_rotation() {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 10.0f64.to_radians());
    let t = Vector3::new(0.0, 0.0, 1.0);
    let est = Pose::new(*r.matrix(), t).unwrap();
    let gt = Pose::new(Matrix3::identity(), t).unwrap();
    assert!((angular_pose_error(&est, &gt) - 10.0).abs() < 1e-9);
}

#[test]
fn angular_error_orthogonal_translations() {
    let est = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let gt = Pose::new(Matrix3::identity(), Vector3::new(0.0, 1.0, 0.0)).unwrap();
    assert!((angular_pose_error(&est, &gt) - 90.0).abs() < 1e-9);
}

#[test]
fn angular_error_is_a_pseudometric() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    for _ in 0..20 {
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let ab = angular_pose_error(&a, &b);
        let ba = angular_pose_error(&b, &a);
        assert!(ab >= 0.0);
        assert!((ab - ba).abs() < 1e-9);
        assert!(angular_pose_error(&a, &a) < 1e-12);
    }
}

#[test]
fn five_point_round_trip_sample() {
    // Smaller version of the acceptance sweep: solver + decomposition
    // recover the generating pose.
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut ok = 0;
    let mut total = 0;
    for _ in 0..100 {
        let pose = random_pose(&mut rng);
        let corr: Vec<_> = (0..5).map(|_| exact_correspondence(&pose, &mut rng)).collect();
        let arr: [_; 5] = corr.clone().try_into().unwrap();
        let solutions = match five_point_solve(&arr) {
            Ok(s) => s,
            Err(GeometryError::DegenerateConfiguration) => continue,
            Err(e) => panic!("unexpected error {e:?}"),
        };
        total += 1;
        let best = solutions
            .iter()
            .filter_map(|e| decompose_essential(e, &corr).ok())
            .map(|p| angular_pose_error(&p, &pose))
            .fold(f64::INFINITY, f64::min);
        if best < 1e-5 {
            ok += 1;
        }
    }
    assert!(total >= 95);
    assert!(ok as f64 >= 0.99 * total as f64, "{ok}/{total} round trips");
}
