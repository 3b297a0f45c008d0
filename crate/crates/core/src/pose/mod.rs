//! Object pose and metric scale from rendered-view correspondences.
//!
//! 2D–2D matches between the real image and rendered views are lifted to
//! 3D–2D correspondences with the rendered depth, a robust PnP solve gives
//! the object pose up to scale, and the median real/rendered depth ratio over
//! the mask overlap fixes the scale.

mod p3p;
mod pnp;

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_similarity, unproject, GeometryError, SimilarityTransform, TriangleMesh};
use crate::raster::{DepthMap, InstanceMask, RenderedView};

pub use p3p::p3p;
pub use pnp::{reprojection_error, solve_pnp_ransac, PnpConfig, PnpResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("match references unknown view id {0}")]
    UnknownViewId(u32),
    #[error("PnP needs at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate correspondence configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("mask overlap has no pixel with valid depth in both maps")]
    EmptyOverlap,
    #[error("scale {0} must be positive")]
    NonPositiveScale(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A match between a real-image pixel `x0` and a rendered-view pixel `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match2D2D {
    pub x0: Vector2<f64>,
    pub x1: Vector2<f64>,
    pub view_id: u32,
    pub confidence: f64,
}

/// A 3D point in the mesh frame paired with its real-image pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corr3D2D {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    /// Matches whose rendered pixel is closer than this to the render border are dropped.
    pub border_px: f64,
    pub min_confidence: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self { border_px: 5.0, min_confidence: 0.0 }
    }
}

/// Lifts rendered-view pixels to mesh-frame 3D points using the rendered depth.
pub fn lift_matches(matches: &[Match2D2D], views: &[RenderedView], cfg: &LiftConfig) -> Result<Vec<Corr3D2D>, PoseError> {
    let by_id: HashMap<u32, &RenderedView> = views.iter().map(|v| (v.view_id, v)).collect();
    let mut out = Vec::with_capacity(matches.len());
    for m in matches {
        let view = by_id.get(&m.view_id).ok_or(PoseError::UnknownViewId(m.view_id))?;
        if m.confidence < cfg.min_confidence {
            continue;
        }
        let (w, h) = (view.depth.width as f64, view.depth.height as f64);
        let border = m.x1.x.min(m.x1.y).min(w - 1.0 - m.x1.x).min(h - 1.0 - m.x1.y);
        if !(border >= cfg.border_px) {
            continue;
        }
        let Some(depth) = view.depth.sample_nearest(&m.x1) else { continue };
        let Ok(cam) = unproject(&m.x1, depth as f64, &view.intrinsics) else { continue };
        out.push(Corr3D2D { point: view.pose.inverse().transform(&cam), pixel: m.x0, confidence: m.confidence });
    }
    Ok(out)
}

/// Lower median of `d_real / d_render` over `mask ∩ mask_render` where both
/// depths are valid.
pub fn estimate_scale_median(d_real: &DepthMap, d_render: &DepthMap, mask: &InstanceMask, mask_render: &InstanceMask) -> Result<f64, PoseError> {
    let (w, h) = (d_real.width, d_real.height);
    if !(d_render.same_size(w, h) && mask.same_size(w, h) && mask_render.same_size(w, h)) {
        return Err(PoseError::DimensionMismatch(format!(
            "real depth {w}x{h}, render depth {}x{}, mask {}x{}, render mask {}x{}",
            d_render.width, d_render.height, mask.width, mask.height, mask_render.width, mask_render.height
        )));
    }
    let mut ratios: Vec<f64> = (0..d_real.values.len())
        .filter(|&i| mask.values[i] && mask_render.values[i])
        .filter_map(|i| {
            let (a, b) = (d_real.values[i], d_render.values[i]);
            (DepthMap::is_valid_value(a) && DepthMap::is_valid_value(b)).then(|| a as f64 / b as f64)
        })
        .collect();
    if ratios.is_empty() {
        return Err(PoseError::EmptyOverlap);
    }
    let mid = (ratios.len() - 1) / 2;
    let (_, median, _) = ratios.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*median)
}

/// Places the canonical mesh in the camera frame: `v' = s·(R v) + s·T`.
pub fn place_object(mesh: &TriangleMesh, pnp: &PnpResult, scale: f64) -> Result<(TriangleMesh, SimilarityTransform), PoseError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PoseError::NonPositiveScale(scale));
    }
    let mut pose = pnp.pose;
    pose.translation *= scale;
    let transform = SimilarityTransform::new(scale, pose).map_err(|e| match e {
        GeometryError::NonPositiveScale(s) => PoseError::NonPositiveScale(s),
        other => PoseError::DegenerateConfiguration(other.to_string()),
    })?;
    Ok((apply_similarity(mesh, &transform), transform))
}

#[cfg(test)]
mod tests;
