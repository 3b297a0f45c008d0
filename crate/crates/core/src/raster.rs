//! Software z-buffer renderer producing depth maps and binary masks.
//!
//! Depth is interpolated perspective-correctly (linear in `1/z` across the
//! screen), so every covered pixel stores the exact camera-space depth of the
//! nearest triangle plane along that pixel's ray. Triangles are clipped
//! against the near plane before projection. Pixel centres sit at integer
//! coordinates (top-left pixel centre is `(0, 0)`), no anti-aliasing.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};

/// Near clipping plane, metres.
pub const NEAR_PLANE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("view count must be at least 1")]
    NoViews,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Row-major depth grid in metres; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, values: vec![0.0; width as usize * height as usize] }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(RasterError::DimensionMismatch(format!("{} values for a {width}x{height} depth map", values.len())));
        }
        Ok(Self { width, height, values })
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.values[self.index(u, v)]
    }

    /// Valid depth: strictly positive and finite.
    #[inline]
    pub fn is_valid_value(d: f32) -> bool {
        d > 0.0 && d.is_finite()
    }

    /// Depth at the pixel nearest to a continuous coordinate, if valid.
    pub fn sample_nearest(&self, px: &Vector2<f64>) -> Option<f32> {
        let (u, v) = nearest_pixel(px, self.width, self.height)?;
        let d = self.get(u, v);
        Self::is_valid_value(d).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| Self::is_valid_value(**d)).count()
    }

    pub fn same_size(&self, width: u32, height: u32) -> bool {
        self.width == width && self.height == height
    }
}

/// Rounds a continuous pixel coordinate to the nearest in-bounds pixel.
pub fn nearest_pixel(px: &Vector2<f64>, width: u32, height: u32) -> Option<(u32, u32)> {
    let u = px.x.round();
    let v = px.y.round();
    if !(u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64) {
        return None;
    }
    Some((u as u32, v as u32))
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub width: u32,
    pub height: u32,
    pub values: Vec<bool>,
}

impl InstanceMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, values: vec![false; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                values.push(f(u, v));
            }
        }
        Self { width, height, values }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.values[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, on: bool) {
        let i = v as usize * self.width as usize + u as usize;
        self.values[i] = on;
    }

    pub fn area(&self) -> usize {
        self.values.iter().filter(|b| **b).count()
    }

    pub fn same_size(&self, width: u32, height: u32) -> bool {
        self.width == width && self.height == height
    }
}

/// One rendered view: depth, its support mask, and the camera that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub depth: DepthMap,
    pub mask: InstanceMask,
    pub intrinsics: CameraIntrinsics,
    /// World (mesh) → camera.
    pub pose: Pose,
    pub view_id: u32,
}

/// Renders `mesh` through camera `k` placed at `pose` (world → camera).
pub fn render(mesh: &TriangleMesh, k: &CameraIntrinsics, pose: &Pose) -> Result<RenderedView, RasterError> {
    let depth = render_depth(mesh, k, pose)?;
    let mask = InstanceMask { width: depth.width, height: depth.height, values: depth.values.iter().map(|d| DepthMap::is_valid_value(*d)).collect() };
    Ok(RenderedView { depth, mask, intrinsics: *k, pose: *pose, view_id: 0 })
}

pub fn render_depth(mesh: &TriangleMesh, k: &CameraIntrinsics, pose: &Pose) -> Result<DepthMap, RasterError> {
    if mesh.faces.is_empty() || mesh.vertices.is_empty() {
        return Err(RasterError::EmptyMesh);
    }
    let (w, h) = (k.width as usize, k.height as usize);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| pose.transform(v)).collect();

    let mut poly: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for f in &mesh.faces {
        let tri = [cam[f[0]], cam[f[1]], cam[f[2]]];
        if tri.iter().all(|p| p.z < NEAR_PLANE) {
            continue;
        }
        clip_near(&tri, &mut poly);
        for i in 1..poly.len().saturating_sub(1) {
            raster_triangle(&[poly[0], poly[i], poly[i + 1]], k, &mut zbuf);
        }
    }

    let values = zbuf.into_iter().map(|z| if z.is_finite() { z as f32 } else { 0.0 }).collect();
    Ok(DepthMap { width: k.width, height: k.height, values })
}

/// Sutherland–Hodgman clip of a triangle against `z >= NEAR_PLANE`.
fn clip_near(tri: &[Vector3<f64>; 3], out: &mut Vec<Vector3<f64>>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

fn raster_triangle(tri: &[Vector3<f64>; 3], k: &CameraIntrinsics, zbuf: &mut [f64]) {
    let s = tri.map(|p| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
    let inv_z = tri.map(|p| 1.0 / p.z);
    let area = edge(&s[0], &s[1], &s[2]);
    if !(area.abs() > 1e-14) || !area.is_finite() {
        return;
    }
    let (w, h) = (k.width as i64, k.height as i64);
    let min_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_x = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min((w - 1) as f64);
    let min_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_y = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min((h - 1) as f64);
    if min_x > max_x || min_y > max_y {
        return;
    }
    const INSIDE_EPS: f64 = -1e-9;
    let inv_area = 1.0 / area;
    for y in min_y as i64..=max_y as i64 {
        for x in min_x as i64..=max_x as i64 {
            let p = Vector2::new(x as f64, y as f64);
            let b0 = edge(&s[1], &s[2], &p) * inv_area;
            let b1 = edge(&s[2], &s[0], &p) * inv_area;
            let b2 = 1.0 - b0 - b1;
            if b0 < INSIDE_EPS || b1 < INSIDE_EPS || b2 < INSIDE_EPS {
                continue;
            }
            let iz = b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2];
            if !(iz > 0.0) {
                continue;
            }
            let z = 1.0 / iz;
            let idx = (y * w + x) as usize;
            if z < zbuf[idx] {
                zbuf[idx] = z;
            }
        }
    }
}

/// Camera for a turntable view: on a sphere of `radius` about `target`,
/// looking at it, with image rows pointing down (+y is gravity).
///
/// Azimuth 0 / elevation 0 puts the camera at `target - radius·ẑ`; positive
/// elevation raises the camera (towards −y), positive azimuth swings it
/// towards +x.
pub fn turntable_pose(target: &Vector3<f64>, azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Pose {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let dir = Vector3::new(az.sin() * el.cos(), -el.sin(), -az.cos() * el.cos());
    let center = target + dir * radius;
    let forward = -dir;
    let down = Vector3::new(0.0, 1.0, 0.0);
    let mut right = down.cross(&forward);
    if right.norm() < 1e-9 {
        right = Vector3::new(az.cos(), 0.0, az.sin());
    }
    let right = right.normalize();
    let below = forward.cross(&right);
    let rotation = nalgebra::Matrix3::from_rows(&[right.transpose(), below.transpose(), forward.transpose()]);
    Pose { rotation, translation: -(rotation * center) }
}

/// Renders `n_views` views at azimuths `i·360/n_views` degrees around the
/// mesh centroid at a fixed elevation.
pub fn render_turntable(mesh: &TriangleMesh, elevation_deg: f64, n_views: usize, k: &CameraIntrinsics, radius: f64) -> Result<Vec<RenderedView>, RasterError> {
    if mesh.faces.is_empty() {
        return Err(RasterError::EmptyMesh);
    }
    if n_views == 0 {
        return Err(RasterError::NoViews);
    }
    let target = mesh.centroid();
    (0..n_views)
        .map(|i| {
            let azimuth = i as f64 * 360.0 / n_views as f64;
            let pose = turntable_pose(&target, azimuth, elevation_deg, radius);
            let mut view = render(mesh, k, &pose)?;
            view.view_id = i as u32;
            Ok(view)
        })
        .collect()
}

/// Turntable camera settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TurntableConfig {
    pub resolution: u32,
    /// Fraction of the image extent the mesh bounding sphere should span.
    pub fill: f64,
    pub n_views: usize,
}

impl Default for TurntableConfig {
    fn default() -> Self {
        Self { resolution: 512, fill: 0.8, n_views: 8 }
    }
}

impl TurntableConfig {
    /// Intrinsics and camera distance framing `mesh` at `fill` of the image.
    pub fn frame(&self, mesh: &TriangleMesh) -> (CameraIntrinsics, f64) {
        let res = self.resolution.max(1);
        let f = res as f64;
        let c = (res as f64 - 1.0) * 0.5;
        let k = CameraIntrinsics { fx: f, fy: f, cx: c, cy: c, width: res, height: res };
        let r = mesh.radius_about(&mesh.centroid()).max(1e-9);
        let half_angle = (0.5 * self.fill * res as f64 / f).atan();
        (k, r / half_angle.sin())
    }

    pub fn render(&self, mesh: &TriangleMesh, elevation_deg: f64) -> Result<Vec<RenderedView>, RasterError> {
        let (k, radius) = self.frame(mesh);
        render_turntable(mesh, elevation_deg, self.n_views, &k, radius)
    }
}
