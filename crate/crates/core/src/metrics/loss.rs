//! Box losses: corner Chamfer distance, per-attribute-group disentangled
//! losses and the uncertainty-weighted objective.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::geometry::{project, unproject, Box3D, CameraIntrinsics};

/// Symmetric corner Chamfer distance with unsquared Euclidean distances.
pub fn chamfer_box(a: &Box3D, b: &Box3D) -> f64 {
    chamfer_box_with(a, b, false)
}

/// Mean nearest-corner distance from `a` to `b` plus the mirrored term;
/// `squared` uses squared distances.
pub fn chamfer_box_with(a: &Box3D, b: &Box3D, squared: bool) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let one_way = |from: &[Vector3<f64>; 8], to: &[Vector3<f64>; 8]| {
        from.iter()
            .map(|p| {
                let d2 = to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
                if squared {
                    d2
                } else {
                    d2.sqrt()
                }
            })
            .sum::<f64>()
            / 8.0
    };
    one_way(&ca, &cb) + one_way(&cb, &ca)
}

/// Box parameterised by projected centre, depth, dimensions and rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxAttributes {
    pub xy2d: Vector2<f64>,
    pub z: f64,
    pub dims: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl BoxAttributes {
    pub fn to_box(&self, k: &CameraIntrinsics) -> Result<Box3D, MetricsError> {
        if !(self.z > 0.0) {
            return Err(MetricsError::NonPositiveDepth(self.z));
        }
        let center = unproject(&self.xy2d, self.z, k)?;
        Ok(Box3D::new(center, self.dims, self.rotation)?)
    }

    pub fn from_box(b: &Box3D, k: &CameraIntrinsics) -> Result<Self, MetricsError> {
        if !(b.center.z > 0.0) {
            return Err(MetricsError::NonPositiveDepth(b.center.z));
        }
        let (xy2d, z) = project(&b.center, k)?;
        Ok(Self { xy2d, z, dims: b.dims, rotation: b.rotation })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentangledLosses {
    pub xy2d: f64,
    pub z: f64,
    pub dims: f64,
    pub rotation: f64,
    pub holistic: f64,
    /// `xy2d + z + dims + rotation + holistic`.
    pub total: f64,
}

/// Each group loss substitutes one predicted attribute group into the ground
/// truth before building the box; the holistic term uses the full prediction.
pub fn disentangled_losses(pred: &BoxAttributes, gt: &BoxAttributes, k: &CameraIntrinsics) -> Result<DisentangledLosses, MetricsError> {
    let gt_box = gt.to_box(k)?;
    let loss = |a: BoxAttributes| a.to_box(k).map(|b| chamfer_box(&b, &gt_box));
    let xy2d = loss(BoxAttributes { xy2d: pred.xy2d, ..*gt })?;
    let z = loss(BoxAttributes { z: pred.z, ..*gt })?;
    let dims = loss(BoxAttributes { dims: pred.dims, ..*gt })?;
    let rotation = loss(BoxAttributes { rotation: pred.rotation, ..*gt })?;
    let holistic = loss(*pred)?;
    Ok(DisentangledLosses { xy2d, z, dims, rotation, holistic, total: xy2d + z + dims + rotation + holistic })
}

/// `√2·exp(−μ)·l3d + μ`.
pub fn uncertainty_loss(l3d: f64, mu: f64) -> f64 {
    std::f64::consts::SQRT_2 * (-mu).exp() * l3d + mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, CORNER_SIGNS};
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn gt_attrs() -> BoxAttributes {
        BoxAttributes { xy2d: Vector2::new(300.0, 250.0), z: 8.0, dims: Vector3::new(1.8, 1.5, 4.2), rotation: axis_angle(&Vector3::y(), 0.4) }
    }

    /// Builds the box directly from the pinhole relations, without `unproject`.
    fn oracle_box(xy: Vector2<f64>, z: f64, dims: Vector3<f64>, r: Matrix3<f64>) -> Box3D {
        let c = Vector3::new((xy.x - 320.0) * z / 500.0, (xy.y - 240.0) * z / 500.0, z);
        Box3D { center: c, dims, rotation: r }
    }

    /// Brute-force chamfer over all 64 corner pairs, written from corner signs.
    fn oracle_chamfer(a: &Box3D, b: &Box3D) -> f64 {
        let corners = |x: &Box3D| -> Vec<Vector3<f64>> {
            CORNER_SIGNS.iter().map(|s| x.center + x.rotation * Vector3::new(s[0], s[1], s[2]).component_mul(&x.dims) / 2.0).collect()
        };
        let (ca, cb) = (corners(a), corners(b));
        let mut total = 0.0;
        for (from, to) in [(&ca, &cb), (&cb, &ca)] {
            for p in from.iter() {
                let mut best = f64::MAX;
                for q in to.iter() {
                    best = best.min(((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt());
                }
                total += best / 8.0;
            }
        }
        total
    }

    #[test]
    fn chamfer_examples() {
        let a = Box3D::axis_aligned(Vector3::new(0.0, 0.0, 5.0), Vector3::repeat(1.0)).unwrap();
        assert_eq!(chamfer_box(&a, &a), 0.0);
        for t in [0.1, 0.25, 0.5] {
            let mut b = a;
            b.center.x += t;
            assert!((chamfer_box(&a, &b) - 2.0 * t).abs() < 1e-12, "{t}");
        }
        // Beyond half the edge, the nearest corner of the shifted box is on the
        // opposite face: each corner is at min(t, 1 − t) or t.
        for t in [0.6, 0.8, 1.0] {
            let mut b = a;
            b.center.x += t;
            let expected = t + t.min(1.0 - t);
            assert!((chamfer_box(&a, &b) - expected).abs() < 1e-12, "{t}");
            assert!((chamfer_box(&a, &b) - oracle_chamfer(&a, &b)).abs() < 1e-12);
        }
        let mut b = a;
        b.center.x += 0.3;
        assert!((chamfer_box_with(&a, &b, true) - 2.0 * 0.09).abs() < 1e-12);
    }

    #[test]
    fn chamfer_ignores_corner_labelling() {
        // A 180° turn about y relabels the corners of the same box.
        let a = Box3D::new(Vector3::new(0.5, 0.2, 6.0), Vector3::new(1.0, 2.0, 3.0), axis_angle(&Vector3::y(), 0.3)).unwrap();
        let relabelled = Box3D { rotation: a.rotation * axis_angle(&Vector3::y(), std::f64::consts::PI), ..a };
        let b = Box3D::new(Vector3::new(0.1, 0.0, 6.5), Vector3::new(1.2, 1.7, 2.5), axis_angle(&Vector3::y(), -0.2)).unwrap();
        assert!(chamfer_box(&a, &relabelled) < 1e-12);
        assert!((chamfer_box(&a, &b) - chamfer_box(&relabelled, &b)).abs() < 1e-12);
    }

    #[test]
    fn losses_vanish_at_ground_truth() {
        let l = disentangled_losses(&gt_attrs(), &gt_attrs(), &k()).unwrap();
        assert_eq!((l.xy2d, l.z, l.dims, l.rotation, l.holistic, l.total), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_group_perturbation_isolates() {
        let gt = gt_attrs();
        let cases = [
            BoxAttributes { z: 9.5, ..gt },
            BoxAttributes { xy2d: Vector2::new(310.0, 245.0), ..gt },
            BoxAttributes { dims: Vector3::new(2.0, 1.4, 4.0), ..gt },
            BoxAttributes { rotation: axis_angle(&Vector3::y(), 0.9), ..gt },
        ];
        for (g, pred) in cases.iter().enumerate() {
            let l = disentangled_losses(pred, &gt, &k()).unwrap();
            let groups = [l.z, l.xy2d, l.dims, l.rotation];
            for (h, v) in groups.iter().enumerate() {
                if h == g {
                    assert!(*v > 0.0);
                    assert_eq!(*v, l.holistic);
                } else {
                    assert_eq!(*v, 0.0, "group {h} in case {g}");
                }
            }
            assert_eq!(l.total, l.xy2d + l.z + l.dims + l.rotation + l.holistic);
        }
    }

    #[test]
    fn non_positive_depth_rejected() {
        let pred = BoxAttributes { z: 0.0, ..gt_attrs() };
        assert_eq!(disentangled_losses(&pred, &gt_attrs(), &k()), Err(MetricsError::NonPositiveDepth(0.0)));
    }

    #[test]
    fn uncertainty_examples() {
        assert!((uncertainty_loss(2.5, 0.0) - SQRT_2 * 2.5).abs() < 1e-12);
        assert_eq!(uncertainty_loss(0.0, 1.0), 1.0);
        for l in [0.3, 1.0, 4.0] {
            let mu = (SQRT_2 * l).ln();
            let h = 1e-6;
            let slope = (uncertainty_loss(l, mu + h) - uncertainty_loss(l, mu - h)) / (2.0 * h);
            assert!(slope.abs() < 1e-6, "{slope}");
            assert!(uncertainty_loss(l, mu + 1e-3) > uncertainty_loss(l, mu));
            assert!(uncertainty_loss(l, mu - 1e-3) > uncertainty_loss(l, mu));
        }
    }

    proptest! {
        #[test]
        fn group_losses_match_box_builder_oracle(
            dx in -30.0..30.0f64, dy in -30.0..30.0f64, dz in -2.0..2.0f64,
            sw in 0.7..1.3f64, sh in 0.7..1.3f64, sl in 0.7..1.3f64, dyaw in -1.0..1.0f64,
        ) {
            let gt = gt_attrs();
            let pred = BoxAttributes {
                xy2d: gt.xy2d + Vector2::new(dx, dy),
                z: gt.z + dz,
                dims: gt.dims.component_mul(&Vector3::new(sw, sh, sl)),
                rotation: axis_angle(&Vector3::y(), 0.4 + dyaw),
            };
            let l = disentangled_losses(&pred, &gt, &k()).unwrap();
            let g = oracle_box(gt.xy2d, gt.z, gt.dims, gt.rotation);
            let tol = 1e-9;
            prop_assert!((l.xy2d - oracle_chamfer(&oracle_box(pred.xy2d, gt.z, gt.dims, gt.rotation), &g)).abs() < tol);
            prop_assert!((l.z - oracle_chamfer(&oracle_box(gt.xy2d, pred.z, gt.dims, gt.rotation), &g)).abs() < tol);
            prop_assert!((l.dims - oracle_chamfer(&oracle_box(gt.xy2d, gt.z, pred.dims, gt.rotation), &g)).abs() < tol);
            prop_assert!((l.rotation - oracle_chamfer(&oracle_box(gt.xy2d, gt.z, gt.dims, pred.rotation), &g)).abs() < tol);
            prop_assert!((l.holistic - oracle_chamfer(&oracle_box(pred.xy2d, pred.z, pred.dims, pred.rotation), &g)).abs() < tol);
            prop_assert_eq!(l.total, l.xy2d + l.z + l.dims + l.rotation + l.holistic);
        }

        #[test]
        fn chamfer_zero_iff_same_corners(t in 0.0..2.0f64) {
            let a = Box3D::axis_aligned(Vector3::new(0.0, 0.0, 5.0), Vector3::repeat(1.0)).unwrap();
            let mut b = a;
            b.center.y += t;
            prop_assert_eq!(chamfer_box(&a, &b) == 0.0, t == 0.0);
        }
    }
}
