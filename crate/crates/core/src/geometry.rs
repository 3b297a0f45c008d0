//! Foundational geometric types: pinhole intrinsics, rigid and similarity
//! transforms, oriented boxes, triangle meshes and point sets.
//!
//! Frames follow the usual computer-vision camera convention: right-handed,
//! `+x` right, `+y` down, `+z` into the scene. Pixel `(u, v)` addresses the
//! centre of the pixel in column `u`, row `v`, with the top-left pixel centre
//! at `(0, 0)`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-6;

/// Triangles with area below this are excluded from surface sampling.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("mesh has no non-degenerate faces")]
    EmptyMesh,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det:.6})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("box dimensions must be positive and finite, got {0:?}")]
    InvalidDims([f64; 3]),
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("scale {0} must be positive")]
    NonPositiveScale(f64),
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be non-zero".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!("principal point ({}, {}) outside {}x{} image", self.cx, self.cy, self.width, self.height)));
        }
        Ok(())
    }

    /// Row-major 3x3 calibration matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        [self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]
    }

    pub fn from_row_major(k: &[f64; 9], width: u32, height: u32) -> Result<Self> {
        Self::new(k[0], k[4], k[2], k[5], width, height)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// Whether the pixel coordinate lies inside the image (pixel centres at integers).
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= -0.5 && px.y >= -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }
}

/// Rigid transform `x' = R x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }
}

/// Checks `RᵀR = I` and `det R = 1` within [`ROTATION_TOL`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
        return Err(GeometryError::InvalidRotation { ortho, det });
    }
    Ok(())
}

/// Similarity transform `x' = s (R x) + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub pose: Pose,
}

impl SimilarityTransform {
    pub fn new(scale: f64, pose: Pose) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::NonPositiveScale(scale));
        }
        Ok(Self { scale, pose })
    }

    pub fn identity() -> Self {
        Self { scale: 1.0, pose: Pose::identity() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.pose.rotation * p) + self.pose.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.pose.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Self { scale: inv_s, pose: Pose { rotation: rt, translation: -(rt * self.pose.translation) * inv_s } }
    }
}

/// Oriented 3D box. `dims = (w, h, l)` are full extents along the box-local
/// x, y, z axes; `rotation` maps box-local coordinates to the parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub dims: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// Sign pattern of [`Box3D::corners`], in units of half-extent.
pub const CORNER_SIGNS: [[f64; 3]; 8] =
    [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]];

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        if !dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(GeometryError::InvalidDims([dims.x, dims.y, dims.z]));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        check_rotation(&rotation)?;
        Ok(Self { center, dims, rotation })
    }

    pub fn axis_aligned(center: Vector3<f64>, dims: Vector3<f64>) -> Result<Self> {
        Self::new(center, dims, Matrix3::identity())
    }

    /// Eight corners in the fixed order of [`CORNER_SIGNS`].
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let half = self.dims * 0.5;
        CORNER_SIGNS.map(|s| self.center + self.rotation * Vector3::new(s[0] * half.x, s[1] * half.y, s[2] * half.z))
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Coordinates of `p` in the box-local frame (origin at the centre).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn contains(&self, p: &Vector3<f64>, slack: f64) -> bool {
        let q = self.to_local(p);
        (0..3).all(|i| q[i].abs() <= 0.5 * self.dims[i] + slack)
    }

    /// Scales about the camera origin: centre and dims multiply by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { center: self.center * s, dims: self.dims * s, rotation: self.rotation }
    }

    pub fn diagonal(&self) -> f64 {
        self.dims.norm()
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index >= vertices.len() {
                    return Err(GeometryError::FaceIndexOutOfRange { face: fi, index, count: vertices.len() });
                }
            }
        }
        if !vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    /// Radius of the smallest origin-at-`center` sphere enclosing all vertices.
    pub fn radius_about(&self, center: &Vector3<f64>) -> f64 {
        self.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max)
    }

    pub fn has_area(&self) -> bool {
        (0..self.faces.len()).any(|f| self.face_area(f) >= DEGENERATE_AREA)
    }

    /// Concatenates meshes, re-indexing faces.
    pub fn merge<'a>(meshes: impl IntoIterator<Item = &'a TriangleMesh>) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        for m in meshes {
            let off = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.faces.extend(m.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<Vector3<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Projects a camera-frame point to a pixel and its depth.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(Vector2<f64>, f64)> {
    if !(p.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok((Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy), p.z))
}

/// Lifts a pixel at metric depth (camera-frame z) to a camera-frame point.
pub fn unproject(px: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new((px.x - k.cx) / k.fx * depth, (px.y - k.cy) / k.fy * depth, depth))
}

pub fn apply_similarity(mesh: &TriangleMesh, t: &SimilarityTransform) -> TriangleMesh {
    TriangleMesh { vertices: mesh.vertices.iter().map(|v| t.apply(v)).collect(), faces: mesh.faces.clone() }
}

/// Samples `n` points uniformly by area over the mesh surface.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointSet> {
    let (points, _) = sample_mesh_surface_with_faces(mesh, n, seed)?;
    Ok(PointSet { points })
}

/// Like [`sample_mesh_surface`], also returning the face each sample came from.
///
/// Faces are chosen by inverting the cumulative area distribution; the point
/// within a face uses the square-root barycentric map, which is uniform in area.
pub fn sample_mesh_surface_with_faces(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<(Vec<Vector3<f64>>, Vec<usize>)> {
    if n == 0 {
        return Err(GeometryError::ZeroSamples);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut face_ids = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let area = mesh.face_area(f);
        if area >= DEGENERATE_AREA {
            total += area;
            cumulative.push(total);
            face_ids.push(f);
        }
    }
    if cumulative.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let slot = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let face = face_ids[slot];
        let [a, b, c] = mesh.triangle(face);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        points.push(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
        faces.push(face);
    }
    Ok((points, faces))
}

/// Rotation by `angle` radians about the unit `axis` (right-hand rule).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

pub fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

pub fn from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}
