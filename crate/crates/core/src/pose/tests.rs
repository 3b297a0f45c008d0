use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{axis_angle, project, rotation_angle_between, CameraIntrinsics, Pose};
use crate::raster::{render, TurntableConfig};
use crate::shapes;

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let r = axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI));
    Pose::new(r, Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(3.0..8.0))).unwrap()
}

fn synthetic_corrs(pose: &Pose, k: &CameraIntrinsics, n: usize, rng: &mut ChaCha8Rng) -> Vec<Corr3D2D> {
    (0..n)
        .map(|_| {
            let point = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (pixel, _) = project(&pose.transform(&point), k).unwrap();
            Corr3D2D { point, pixel, confidence: 1.0 }
        })
        .collect()
}

#[test]
fn pnp_recovers_exact_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = camera();
    for _ in 0..10 {
        let truth = random_pose(&mut rng);
        let corrs = synthetic_corrs(&truth, &k, 60, &mut rng);
        let res = solve_pnp_ransac(&corrs, &k, &PnpConfig::default()).unwrap();
        assert!(rotation_angle_between(&res.pose.rotation, &truth.rotation).to_degrees() < 0.1);
        assert!((res.pose.translation - truth.translation).norm() < 1e-4 * truth.translation.norm());
        assert_eq!(res.inlier_indices.len(), 60);
        assert!(res.mean_reprojection_error < 1e-6);
    }
}

#[test]
fn pnp_rejects_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = camera();
    for _ in 0..10 {
        let truth = random_pose(&mut rng);
        let mut corrs = synthetic_corrs(&truth, &k, 100, &mut rng);
        let mut outliers = Vec::new();
        for (i, c) in corrs.iter_mut().enumerate().filter(|(i, _)| i % 10 < 3) {
            // Uniform in the image, at least 20 px from the true projection.
            loop {
                let p = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                if (p - c.pixel).norm() > 20.0 {
                    c.pixel = p;
                    break;
                }
            }
            outliers.push(i);
        }
        let res = solve_pnp_ransac(&corrs, &k, &PnpConfig::default()).unwrap();
        assert!(rotation_angle_between(&res.pose.rotation, &truth.rotation).to_degrees() < 0.1);
        assert!((res.pose.translation - truth.translation).norm() < 1e-4 * truth.translation.norm());
        assert!(outliers.iter().all(|o| !res.inlier_indices.contains(o)));
        assert_eq!(res.inlier_indices.len(), 70);
        // Every reported inlier satisfies the threshold under the returned pose.
        let thresh = PnpConfig::default().threshold(&k);
        for &i in &res.inlier_indices {
            assert!(reprojection_error(&res.pose, &k, &corrs[i].point, &corrs[i].pixel) <= thresh);
        }
    }
}

#[test]
fn pnp_trims_outliers_inside_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = camera();
    let truth = random_pose(&mut rng);
    let mut corrs = synthetic_corrs(&truth, &k, 80, &mut rng);
    // Contaminants 4-6 px off: inside the 8 px RANSAC threshold.
    for c in corrs.iter_mut().take(3) {
        c.pixel += Vector2::new(rng.random_range(4.0..6.0), rng.random_range(-1.0..1.0));
    }
    let res = solve_pnp_ransac(&corrs, &k, &PnpConfig::default()).unwrap();
    assert!(rotation_angle_between(&res.pose.rotation, &truth.rotation).to_degrees() < 1e-4);
    assert!((res.pose.translation - truth.translation).norm() < 1e-8 * truth.translation.norm());
}

#[test]
fn pnp_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = camera();
    let truth = random_pose(&mut rng);
    let mut corrs = synthetic_corrs(&truth, &k, 50, &mut rng);
    for c in corrs.iter_mut().step_by(3) {
        c.pixel += Vector2::new(40.0, -30.0);
    }
    let cfg = PnpConfig { seed: 17, ..Default::default() };
    assert_eq!(solve_pnp_ransac(&corrs, &k, &cfg).unwrap(), solve_pnp_ransac(&corrs, &k, &cfg).unwrap());
}

#[test]
fn pnp_error_paths() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = random_pose(&mut rng);
    let corrs = synthetic_corrs(&truth, &k, 3, &mut rng);
    assert_eq!(solve_pnp_ransac(&corrs, &k, &PnpConfig::default()), Err(PoseError::TooFewCorrespondences(3)));

    let line: Vec<Corr3D2D> = (0..10)
        .map(|i| {
            let point = Vector3::new(i as f64 * 0.1, 0.0, 0.0);
            let (pixel, _) = project(&truth.transform(&point), &k).unwrap();
            Corr3D2D { point, pixel, confidence: 1.0 }
        })
        .collect();
    assert!(matches!(solve_pnp_ransac(&line, &k, &PnpConfig::default()), Err(PoseError::DegenerateConfiguration(_))));
}

#[test]
fn pnp_handles_coplanar_points() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_pose(&mut rng);
    let corrs: Vec<Corr3D2D> = (0..40)
        .map(|_| {
            let point = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
            let (pixel, _) = project(&truth.transform(&point), &k).unwrap();
            Corr3D2D { point, pixel, confidence: 1.0 }
        })
        .collect();
    let res = solve_pnp_ransac(&corrs, &k, &PnpConfig::default()).unwrap();
    assert!(rotation_angle_between(&res.pose.rotation, &truth.rotation).to_degrees() < 0.1);
}

fn cube_views() -> Vec<crate::raster::RenderedView> {
    TurntableConfig { resolution: 128, ..Default::default() }.render(&shapes::cuboid(Vector3::new(1.0, 1.0, 1.0)), 25.0).unwrap()
}

#[test]
fn lift_drops_invalid_depth_and_border_matches() {
    let views = cube_views();
    let cfg = LiftConfig::default();
    let m = |x1: Vector2<f64>| Match2D2D { x0: Vector2::new(10.0, 10.0), x1, view_id: 0, confidence: 1.0 };
    // Corner pixel: background, no depth.
    assert!(lift_matches(&[m(Vector2::new(10.0, 10.0))], &views, &cfg).unwrap().is_empty());
    // 2 px from the border.
    assert!(lift_matches(&[m(Vector2::new(2.0, 64.0))], &views, &cfg).unwrap().is_empty());
    // Centre pixel: on the cube.
    assert_eq!(lift_matches(&[m(Vector2::new(64.0, 64.0))], &views, &cfg).unwrap().len(), 1);

    let unknown = Match2D2D { view_id: 99, ..m(Vector2::new(64.0, 64.0)) };
    assert_eq!(lift_matches(&[unknown], &views, &cfg), Err(PoseError::UnknownViewId(99)));
}

#[test]
fn lifted_points_lie_on_cube_surface() {
    let views = cube_views();
    let mut matches = Vec::new();
    for view in &views {
        for v in (0..128).step_by(3) {
            for u in (0..128).step_by(3) {
                matches.push(Match2D2D { x0: Vector2::zeros(), x1: Vector2::new(u as f64, v as f64), view_id: view.view_id, confidence: 1.0 });
            }
        }
    }
    let corrs = lift_matches(&matches, &views, &LiftConfig::default()).unwrap();
    assert!(corrs.len() > 1000);
    // Ray-cast oracle: a point on the unit cube surface has max |coordinate| = 0.5.
    let radius = TurntableConfig { resolution: 128, ..Default::default() }.frame(&shapes::cuboid(Vector3::repeat(1.0))).1;
    let px_size = radius / 128.0;
    for c in &corrs {
        let m = c.point.abs().max();
        assert!((m - 0.5).abs() < px_size, "point {:?}", c.point);
    }
}

#[test]
fn scale_median_examples() {
    let (w, h) = (4u32, 3u32);
    let render_d = DepthMap::from_values(w, h, (1..=12).map(|v| v as f32 * 0.5).collect()).unwrap();
    let real = DepthMap { values: render_d.values.iter().map(|v| v * 3.0).collect(), ..render_d.clone() };
    let all = InstanceMask::from_fn(w, h, |_, _| true);
    assert!((estimate_scale_median(&real, &render_d, &all, &all).unwrap() - 3.0).abs() < 1e-6);

    let ones = DepthMap::from_values(3, 1, vec![1.0; 3]).unwrap();
    let ratios = DepthMap::from_values(3, 1, vec![1.0, 2.0, 100.0]).unwrap();
    let m = InstanceMask::from_fn(3, 1, |_, _| true);
    assert_eq!(estimate_scale_median(&ratios, &ones, &m, &m).unwrap(), 2.0);

    // Even count takes the lower median.
    let four = DepthMap::from_values(4, 1, vec![4.0, 1.0, 3.0, 2.0]).unwrap();
    let m4 = InstanceMask::from_fn(4, 1, |_, _| true);
    assert_eq!(estimate_scale_median(&four, &DepthMap::from_values(4, 1, vec![1.0; 4]).unwrap(), &m4, &m4).unwrap(), 2.0);

    let left = InstanceMask::from_fn(w, h, |u, _| u < 2);
    let right = InstanceMask::from_fn(w, h, |u, _| u >= 2);
    assert_eq!(estimate_scale_median(&real, &render_d, &left, &right), Err(PoseError::EmptyOverlap));
}

#[test]
fn scale_median_ignores_invalid_depth() {
    let render_d = DepthMap::from_values(3, 1, vec![1.0, 0.0, 1.0]).unwrap();
    let real = DepthMap::from_values(3, 1, vec![2.0, 50.0, f32::NAN]).unwrap();
    let m = InstanceMask::from_fn(3, 1, |_, _| true);
    assert_eq!(estimate_scale_median(&real, &render_d, &m, &m).unwrap(), 2.0);
}

proptest! {
    #[test]
    fn scale_median_is_homogeneous(c in 0.01f64..100.0, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 31;
        let d_render: Vec<f32> = (0..n).map(|_| rng.random_range(0.5f32..3.0)).collect();
        let d_real: Vec<f32> = (0..n).map(|_| rng.random_range(0.5f32..9.0)).collect();
        let r = DepthMap::from_values(n as u32, 1, d_render).unwrap();
        let q = DepthMap::from_values(n as u32, 1, d_real).unwrap();
        let m = InstanceMask::from_fn(n as u32, 1, |u, _| u % 4 != 1);
        let base = estimate_scale_median(&q, &r, &m, &m).unwrap();
        let qc = DepthMap { values: q.values.iter().map(|v| (*v as f64 * c) as f32).collect(), ..q.clone() };
        let rc = DepthMap { values: r.values.iter().map(|v| (*v as f64 * c) as f32).collect(), ..r.clone() };
        // Scaled maps are rounded back to f32, so equality holds to f32 precision.
        prop_assert!((estimate_scale_median(&qc, &r, &m, &m).unwrap() / (c * base) - 1.0).abs() < 1e-6);
        prop_assert!((estimate_scale_median(&q, &rc, &m, &m).unwrap() * c / base - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lift_is_monotone_in_filters(b0 in 0.0f64..20.0, db in 0.0f64..20.0, c0 in 0.0f64..1.0, dc in 0.0f64..1.0) {
        let views = cube_views();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let matches: Vec<Match2D2D> = (0..400)
            .map(|_| Match2D2D {
                x0: Vector2::zeros(),
                x1: Vector2::new(rng.random_range(0.0..128.0), rng.random_range(0.0..128.0)),
                view_id: rng.random_range(0..8),
                confidence: rng.random_range(0.0..1.0),
            })
            .collect();
        let loose = lift_matches(&matches, &views, &LiftConfig { border_px: b0, min_confidence: c0 }).unwrap();
        let tight = lift_matches(&matches, &views, &LiftConfig { border_px: b0 + db, min_confidence: c0 + dc }).unwrap();
        prop_assert!(tight.len() <= loose.len());
    }
}

#[test]
fn place_object_with_unit_scale_is_rigid() {
    let mesh = shapes::cuboid(Vector3::new(1.0, 2.0, 0.5));
    let pose = Pose::new(axis_angle(&Vector3::y(), 0.4), Vector3::new(0.0, 0.0, 4.0)).unwrap();
    let pnp = PnpResult { pose, inlier_indices: vec![], mean_reprojection_error: 0.0 };
    let (placed, t) = place_object(&mesh, &pnp, 1.0).unwrap();
    for (a, b) in placed.vertices.iter().zip(&mesh.vertices) {
        assert!((a - pose.transform(b)).norm() < 1e-12);
    }
    assert_eq!(t.scale, 1.0);
    assert_eq!(place_object(&mesh, &pnp, 0.0).unwrap_err(), PoseError::NonPositiveScale(0.0));
    assert!(place_object(&mesh, &pnp, -2.0).is_err());
}

/// Runs the full chain on a synthetic object: turntable render, matches by
/// forward projection, PnP, scale from the real depth, placement.
fn recover_placement(truth: &crate::geometry::SimilarityTransform, real_depth_scale: f32) -> crate::geometry::SimilarityTransform {
    let k = camera();
    let mesh = shapes::cuboid(Vector3::new(0.8, 0.5, 0.3));
    let views = TurntableConfig { resolution: 256, ..Default::default() }.render(&mesh, 15.0).unwrap();
    let posed = crate::geometry::apply_similarity(&mesh, truth);
    let real = render(&posed, &k, &Pose::identity()).unwrap();
    let mut matches = Vec::new();
    for view in &views {
        for v in (0..256).step_by(4) {
            for u in (0..256).step_by(4) {
                let x1 = Vector2::new(u as f64, v as f64);
                let Some(d) = view.depth.sample_nearest(&x1) else { continue };
                let x_mesh = view.pose.inverse().transform(&unproject(&x1, d as f64, &view.intrinsics).unwrap());
                let (x0, z) = project(&truth.apply(&x_mesh), &k).unwrap();
                // Visible in the real image.
                if let Some(dr) = real.depth.sample_nearest(&x0) {
                    if (dr as f64 - z).abs() < 1e-3 * z {
                        matches.push(Match2D2D { x0, x1, view_id: view.view_id, confidence: 1.0 });
                    }
                }
            }
        }
    }
    let corrs = lift_matches(&matches, &views, &LiftConfig::default()).unwrap();
    let pnp = solve_pnp_ransac(&corrs, &k, &PnpConfig::default()).unwrap();
    let rendered = render(&mesh, &k, &pnp.pose).unwrap();
    let real_d = DepthMap { values: real.depth.values.iter().map(|v| v * real_depth_scale).collect(), ..real.depth.clone() };
    let s = estimate_scale_median(&real_d, &rendered.depth, &real.mask, &rendered.mask).unwrap();
    place_object(&mesh, &pnp, s).unwrap().1
}

#[test]
fn full_chain_recovers_generating_similarity() {
    let truth = crate::geometry::SimilarityTransform::new(
        2.3,
        Pose::new(axis_angle(&Vector3::y(), 0.6) * axis_angle(&Vector3::x(), 0.1), Vector3::new(0.4, 0.3, 6.0)).unwrap(),
    )
    .unwrap();
    let est = recover_placement(&truth, 1.0);
    assert!((est.scale / truth.scale - 1.0).abs() < 0.01);
    assert!(rotation_angle_between(&est.pose.rotation, &truth.pose.rotation).to_degrees() < 0.5);
    assert!((est.pose.translation - truth.pose.translation).norm() < 0.02 * truth.pose.translation.norm());
}

#[test]
fn doubling_scene_depth_and_distance_keeps_object_size() {
    // Same image, object twice as large and twice as far: the recovered
    // placement scales with the real depth, so the reconstructed object
    // dimensions relative to its distance stay fixed.
    let rot: Matrix3<f64> = axis_angle(&Vector3::y(), -0.3);
    let near = crate::geometry::SimilarityTransform::new(1.5, Pose::new(rot, Vector3::new(0.0, 0.2, 5.0)).unwrap()).unwrap();
    let far = crate::geometry::SimilarityTransform::new(3.0, Pose::new(rot, Vector3::new(0.0, 0.4, 10.0)).unwrap()).unwrap();
    let a = recover_placement(&near, 1.0);
    let b = recover_placement(&far, 1.0);
    assert!((b.scale / a.scale - 2.0).abs() < 0.02);
    assert!(((b.pose.translation.norm() / b.scale) - (a.pose.translation.norm() / a.scale)).abs() < 0.01 * a.pose.translation.norm() / a.scale);
    // Scaling the measured real depth alone by 2 doubles the recovered scale.
    let c = recover_placement(&near, 2.0);
    assert!((c.scale / a.scale - 2.0).abs() < 1e-3);
}
