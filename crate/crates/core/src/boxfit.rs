//! Gravity-aligned oriented box fitting: the box's vertical axis follows a
//! given up direction and only yaw about it is estimated, from PCA of the
//! points projected onto the horizontal plane.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{sample_mesh_surface, Box3D, GeometryError, PointSet, TriangleMesh};

/// Minimum box extent; a single point yields a cube of this size.
pub const MIN_EXTENT: f64 = 1e-6;

/// Eigenvalue ratio below which the horizontal spread counts as isotropic.
pub const ISOTROPY_RATIO: f64 = 1.0 + 1e-6;

/// Eigenvalue ratio below which the principal axis is too weakly determined
/// (square footprints, sampling noise) and the minimum-area footprint
/// rectangle decides the yaw instead.
pub const AMBIGUOUS_RATIO: f64 = 1.1;

pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxFitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("points project to a single location on the horizontal plane")]
    DegeneratePlaneProjection,
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("up vector must be non-zero and finite")]
    InvalidUpAxis,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Unit vertical direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpAxis(Vector3<f64>);

impl UpAxis {
    pub fn new(v: Vector3<f64>) -> Result<Self, BoxFitError> {
        let n = v.norm();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(BoxFitError::InvalidUpAxis);
        }
        Ok(Self(v / n))
    }

    /// Camera frame with +y pointing down: up is −y.
    pub fn camera_default() -> Self {
        Self(Vector3::new(0.0, -1.0, 0.0))
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    /// Horizontal basis `(e1, e2)` with `e2 = up × e1`; yaw is measured from
    /// `e1` towards `e2`, i.e. right-handed about `up`. `e1` is camera +x
    /// projected onto the horizontal plane (camera +z if up is along x).
    pub fn horizontal_basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let u = self.0;
        let mut e1 = Vector3::x() - u * u.x;
        if e1.norm() < 1e-6 {
            e1 = Vector3::z() - u * u.z;
        }
        let e1 = e1.normalize();
        (e1, u.cross(&e1))
    }

    /// Box rotation: column y is up, column x is the yaw direction.
    pub fn box_rotation(&self, yaw: f64) -> Matrix3<f64> {
        let (e1, e2) = self.horizontal_basis();
        let x = e1 * yaw.cos() + e2 * yaw.sin();
        let z = x.cross(&self.0);
        Matrix3::from_columns(&[x, self.0, z])
    }

    /// Yaw of a direction's horizontal component.
    pub fn yaw_of(&self, d: &Vector3<f64>) -> f64 {
        let (e1, e2) = self.horizontal_basis();
        d.dot(&e2).atan2(d.dot(&e1))
    }
}

/// Wraps an angle into `[−π/2, π/2)`.
pub fn canonical_yaw(yaw: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let y = (yaw + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if y >= FRAC_PI_2 {
        y - PI
    } else {
        y
    }
}

/// Dominant horizontal direction of the points, as a yaw in `[−π/2, π/2)`.
pub fn estimate_yaw_pca(pts: &PointSet, up: &UpAxis) -> Result<f64, BoxFitError> {
    if pts.len() < 3 {
        return Err(BoxFitError::TooFewPoints { needed: 3, got: pts.len() });
    }
    let (e1, e2) = up.horizontal_basis();
    let n = pts.len() as f64;
    let (mut ma, mut mb) = (0.0, 0.0);
    for p in &pts.points {
        ma += p.dot(&e1);
        mb += p.dot(&e2);
    }
    ma /= n;
    mb /= n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for p in &pts.points {
        let a = p.dot(&e1) - ma;
        let b = p.dot(&e2) - mb;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    saa /= n;
    sbb /= n;
    sab /= n;

    let half_trace = 0.5 * (saa + sbb);
    let gap = (0.25 * (saa - sbb).powi(2) + sab * sab).sqrt();
    let (l_max, l_min) = (half_trace + gap, half_trace - gap);
    let scale = pts.points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(1e-300);
    if !(l_max > 1e-24 * scale) {
        return Err(BoxFitError::DegeneratePlaneProjection);
    }
    if l_max < ISOTROPY_RATIO * l_min.max(0.0) {
        return Ok(0.0);
    }
    if l_max < AMBIGUOUS_RATIO * l_min.max(0.0) {
        let flat: Vec<(f64, f64)> = pts.points.iter().map(|p| (p.dot(&e1), p.dot(&e2))).collect();
        if let Some(yaw) = min_area_yaw(&flat) {
            return Ok(yaw);
        }
    }
    Ok(canonical_yaw(0.5 * (2.0 * sab).atan2(saa - sbb)))
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Footprints whose yaw-0 rectangle is within this factor of the minimum
/// area are treated as round (spheres, cylinders) and get yaw 0.
pub const ROUND_FOOTPRINT_RATIO: f64 = 1.02;

/// Extents of the hull along direction `theta` and its normal.
fn rect_extents(hull: &[(f64, f64)], theta: f64) -> (f64, f64) {
    let (c, s) = (theta.cos(), theta.sin());
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in hull {
        let u = p.0 * c + p.1 * s;
        let v = -p.0 * s + p.1 * c;
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    (hi_u - lo_u, hi_v - lo_v)
}

/// Yaw of the minimum-area rectangle enclosing 2D points, with the longer
/// side as the yaw direction; `None` for degenerate hulls.
fn min_area_yaw(pts: &[(f64, f64)]) -> Option<f64> {
    let hull = convex_hull(pts.to_vec());
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let theta = (b.1 - a.1).atan2(b.0 - a.0);
        let (du, dv) = rect_extents(&hull, theta);
        let area = du * dv;
        let yaw = canonical_yaw(if du >= dv { theta } else { theta + std::f64::consts::FRAC_PI_2 });
        if best.is_none_or(|(ba, _)| area < ba) {
            best = Some((area, yaw));
        }
    }
    let (area, yaw) = best?;
    let (du, dv) = rect_extents(&hull, 0.0);
    Some(if du * dv <= ROUND_FOOTPRINT_RATIO * area { 0.0 } else { yaw })
}

/// Tightest box with the given up axis and yaw that contains every point.
pub fn fit_tight_box(pts: &PointSet, up: &UpAxis, yaw: f64) -> Result<Box3D, BoxFitError> {
    if pts.is_empty() {
        return Err(BoxFitError::EmptyPointSet);
    }
    let rotation = up.box_rotation(yaw);
    let rt = rotation.transpose();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &pts.points {
        let q = rt * p;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let dims = (hi - lo).map(|d| d.max(MIN_EXTENT));
    let center = rotation * ((lo + hi) * 0.5);
    Ok(Box3D::new(center, dims, rotation)?)
}

/// Surface samples → PCA yaw → tight box.
pub fn annotate_object(posed: &TriangleMesh, up: &UpAxis, n_samples: usize, seed: u64) -> Result<Box3D, BoxFitError> {
    let pts = sample_mesh_surface(posed, n_samples, seed)?;
    let yaw = estimate_yaw_pca(&pts, up)?;
    fit_tight_box(&pts, up, yaw)
}
