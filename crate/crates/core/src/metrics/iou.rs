//! Exact oriented-box IoU by convex polytope clipping, and a Monte-Carlo
//! estimate used to check it.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Box3D;

type Polygon = Vec<Vector3<f64>>;

/// Half-space `n·x ≤ d`.
#[derive(Debug, Clone, Copy)]
struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    fn signed(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn box_faces(b: &Box3D) -> Vec<Polygon> {
    let c = b.corners();
    // Index quads over the corner order (−−−, +−−, ++−, −+−, −−+, +−+, +++, −++).
    const QUADS: [[usize; 4]; 6] = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];
    QUADS.iter().map(|q| q.iter().map(|&i| c[i]).collect()).collect()
}

fn box_planes(b: &Box3D) -> [Plane; 6] {
    let mut out = [Plane { normal: Vector3::zeros(), offset: 0.0 }; 6];
    for axis in 0..3 {
        let n = b.rotation.column(axis).into_owned();
        let h = 0.5 * b.dims[axis];
        let c = n.dot(&b.center);
        out[2 * axis] = Plane { normal: n, offset: c + h };
        out[2 * axis + 1] = Plane { normal: -n, offset: -c + h };
    }
    out
}

/// Clips a convex polytope (given by its faces) to a half-space, closing the
/// cut with a cap polygon.
fn clip(faces: Vec<Polygon>, plane: &Plane, eps: f64) -> Vec<Polygon> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cut_points: Vec<Vector3<f64>> = Vec::new();
    let mut face_on_plane = false;
    for face in faces {
        let dist: Vec<f64> = face.iter().map(|p| plane.signed(p)).collect();
        if dist.iter().all(|d| *d <= eps) {
            if dist.iter().all(|d| d.abs() <= eps) {
                face_on_plane = true;
            }
            cut_points.extend(face.iter().zip(&dist).filter(|(_, d)| d.abs() <= eps).map(|(p, _)| *p));
            out.push(face);
            continue;
        }
        if dist.iter().all(|d| *d > eps) {
            continue;
        }
        let mut poly = Vec::with_capacity(face.len() + 1);
        for i in 0..face.len() {
            let j = (i + 1) % face.len();
            let (p, q, dp, dq) = (face[i], face[j], dist[i], dist[j]);
            let p_in = dp <= eps;
            if p_in {
                poly.push(p);
                if dp.abs() <= eps {
                    cut_points.push(p);
                }
            }
            if p_in != (dq <= eps) {
                let t = dp / (dp - dq);
                let x = p + (q - p) * t;
                poly.push(x);
                cut_points.push(x);
            }
        }
        if poly.len() >= 3 {
            out.push(poly);
        }
    }
    if !face_on_plane {
        if let Some(cap) = order_cap(&cut_points, &plane.normal, eps) {
            out.push(cap);
        }
    }
    out
}

/// Orders coplanar points into a convex polygon, dropping near-duplicates.
fn order_cap(points: &[Vector3<f64>], normal: &Vector3<f64>, eps: f64) -> Option<Polygon> {
    let mut uniq: Polygon = Vec::new();
    for p in points {
        if uniq.iter().all(|q| (p - q).norm() > eps) {
            uniq.push(*p);
        }
    }
    if uniq.len() < 3 {
        return None;
    }
    let c = uniq.iter().sum::<Vector3<f64>>() / uniq.len() as f64;
    let far = uniq.iter().max_by(|a, b| (*a - c).norm_squared().total_cmp(&(*b - c).norm_squared()))?;
    let u = (far - c).try_normalize(0.0)?;
    let v = normal.cross(&u);
    let mut keyed: Vec<(f64, Vector3<f64>)> = uniq.iter().map(|p| ((p - c).dot(&v).atan2((p - c).dot(&u)), *p)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(keyed.into_iter().map(|(_, p)| p).collect())
}

fn polytope_volume(faces: &[Polygon]) -> f64 {
    let n: usize = faces.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    let interior = faces.iter().flatten().sum::<Vector3<f64>>() / n as f64;
    let mut six_v = 0.0;
    for f in faces {
        for i in 1..f.len().saturating_sub(1) {
            let m = Matrix3::from_columns(&[f[0] - interior, f[i] - interior, f[i + 1] - interior]);
            six_v += m.determinant().abs();
        }
    }
    six_v / 6.0
}

/// Volume of `a ∩ b`.
pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let ra = 0.5 * a.diagonal();
    let rb = 0.5 * b.diagonal();
    if (a.center - b.center).norm() > ra + rb {
        return 0.0;
    }
    let eps = 1e-12 * (ra + rb + a.center.norm().max(b.center.norm()));
    let mut faces = box_faces(a);
    for plane in box_planes(b) {
        faces = clip(faces, &plane, eps);
        if faces.len() < 4 {
            return 0.0;
        }
    }
    polytope_volume(&faces)
}

/// Exact 3D IoU of two oriented boxes.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = intersection_volume(a, b);
    let (va, vb) = (a.volume(), b.volume());
    let inter = inter.min(va).min(vb).max(0.0);
    let union = va + vb - inter;
    if !(union > 0.0) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Monte-Carlo IoU estimate and its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouEstimate {
    pub iou: f64,
    pub std_error: f64,
    /// Samples falling in either box.
    pub n_union: u64,
}

struct FastBox {
    rt: Matrix3<f64>,
    center: Vector3<f64>,
    half: Vector3<f64>,
}

impl FastBox {
    fn new(b: &Box3D) -> Self {
        Self { rt: b.rotation.transpose(), center: b.center, half: b.dims * 0.5 }
    }

    #[inline]
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.rt * (p - self.center);
        q.x.abs() <= self.half.x && q.y.abs() <= self.half.y && q.z.abs() <= self.half.z
    }
}

/// Rejection-sampling IoU: `n` uniform samples over the axis-aligned bounding
/// volume of both boxes; estimate = |in both| / |in either|.
pub fn iou3d_oracle(a: &Box3D, b: &Box3D, n: u64, seed: u64) -> IouEstimate {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in a.corners().iter().chain(b.corners().iter()) {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let (fa, fb) = (FastBox::new(a), FastBox::new(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = hi - lo;
    let (mut both, mut either) = (0u64, 0u64);
    for _ in 0..n.max(1) {
        let p = lo + Vector3::new(rng.random::<f64>() * extent.x, rng.random::<f64>() * extent.y, rng.random::<f64>() * extent.z);
        let (ia, ib) = (fa.contains(&p), fb.contains(&p));
        both += (ia && ib) as u64;
        either += (ia || ib) as u64;
    }
    if either == 0 {
        return IouEstimate { iou: 0.0, std_error: 0.0, n_union: 0 };
    }
    let p = both as f64 / either as f64;
    IouEstimate { iou: p, std_error: (p * (1.0 - p) / either as f64).sqrt(), n_union: either }
}
