//! Robust alignment of a relative (affine-invariant) depth map to a metric
//! one, and unprojection of the aligned map into a scene point map.

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unproject, CameraIntrinsics};
use crate::raster::DepthMap;

/// Fewest joint-valid pixels accepted for a fit.
pub const MIN_OVERLAP: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthAlignError {
    #[error("only {0} pixels are valid in both depth maps (need {MIN_OVERLAP})")]
    InsufficientOverlap(usize),
    #[error("relative depth map is identically zero")]
    DegenerateDepth,
    #[error("depth maps differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthFitConfig {
    pub iterations: usize,
    /// Inlier test: `|s·d_rel + t − d_metric| / d_metric ≤ inlier_rel_tol`.
    pub inlier_rel_tol: f64,
    /// Pixel pairs drawn for hypothesis scoring.
    pub sample_count: usize,
    pub seed: u64,
    /// Also fit an additive shift `t` (off: pure scale).
    pub fit_shift: bool,
}

impl Default for DepthFitConfig {
    fn default() -> Self {
        Self { iterations: 2000, inlier_rel_tol: 0.05, sample_count: 5000, seed: 0, fit_shift: false }
    }
}

/// Result of [`fit_depth_scale`]: metric ≈ `scale · relative + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScaleFit {
    pub scale: f64,
    /// Always 0 unless the shift-inclusive variant was requested.
    pub shift: f64,
    /// Fraction of joint-valid pixels that are inliers under the final model.
    pub inlier_ratio: f64,
    /// Pixel pairs used to score RANSAC hypotheses.
    pub n_samples: usize,
}

impl DepthScaleFit {
    pub fn apply(&self, d_rel: f64) -> f64 {
        self.scale * d_rel + self.shift
    }
}

#[inline]
fn valid(d: f32) -> bool {
    d > 0.0 && d.is_finite()
}

#[derive(Clone, Copy)]
struct Model {
    scale: f64,
    shift: f64,
}

impl Model {
    #[inline]
    fn is_inlier(&self, rel: f64, metric: f64, tol: f64) -> bool {
        ((self.scale * rel + self.shift - metric) / metric).abs() <= tol
    }
}

/// Least squares over the given pairs: scale-only through the origin, or
/// scale and shift.
fn least_squares(pairs: impl Iterator<Item = (f64, f64)> + Clone, fit_shift: bool) -> Option<Model> {
    if !fit_shift {
        let (num, den) = pairs.fold((0.0, 0.0), |(n, d), (r, m)| (n + r * m, d + r * r));
        return (den > 0.0).then(|| Model { scale: num / den, shift: 0.0 });
    }
    let (mut n, mut sr, mut sm, mut srr, mut srm) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, m) in pairs {
        n += 1.0;
        sr += r;
        sm += m;
        srr += r * r;
        srm += r * m;
    }
    let det = n * srr - sr * sr;
    if !(det.abs() > 1e-12 * n * srr.max(1e-300)) {
        return None;
    }
    let scale = (n * srm - sr * sm) / det;
    Some(Model { scale, shift: (sm - scale * sr) / n })
}

/// RANSAC fit of a global scale (optionally plus shift) mapping `d_rel` to
/// `d_metric`, refined by least squares over the inliers.
pub fn fit_depth_scale(d_rel: &DepthMap, d_metric: &DepthMap, cfg: &DepthFitConfig) -> Result<DepthScaleFit, DepthAlignError> {
    if !d_rel.same_size(d_metric.width, d_metric.height) {
        return Err(DepthAlignError::DimensionMismatch(d_rel.width, d_rel.height, d_metric.width, d_metric.height));
    }
    if d_rel.values.iter().all(|v| *v == 0.0) {
        return Err(DepthAlignError::DegenerateDepth);
    }
    let pairs: Vec<(f64, f64)> =
        d_rel.values.iter().zip(&d_metric.values).filter(|(r, m)| valid(**r) && valid(**m)).map(|(r, m)| (*r as f64, *m as f64)).collect();
    if pairs.len() < MIN_OVERLAP {
        return Err(DepthAlignError::InsufficientOverlap(pairs.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sample: Vec<(f64, f64)> = if pairs.len() > cfg.sample_count.max(1) {
        let mut idx = index::sample(&mut rng, pairs.len(), cfg.sample_count.max(1)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pairs[i]).collect()
    } else {
        pairs.clone()
    };

    let tol = cfg.inlier_rel_tol;
    let count = |m: &Model, set: &[(f64, f64)]| set.iter().filter(|(r, d)| m.is_inlier(*r, *d, tol)).count();
    let mut best: Option<(usize, Model)> = None;
    for _ in 0..cfg.iterations.max(1) {
        let hypothesis = if cfg.fit_shift {
            let i = rng.random_range(0..sample.len());
            let j = rng.random_range(0..sample.len());
            let ((r0, m0), (r1, m1)) = (sample[i], sample[j]);
            if (r1 - r0).abs() < 1e-12 {
                continue;
            }
            let scale = (m1 - m0) / (r1 - r0);
            Model { scale, shift: m0 - scale * r0 }
        } else {
            let (r, m) = sample[rng.random_range(0..sample.len())];
            Model { scale: m / r, shift: 0.0 }
        };
        if !(hypothesis.scale > 0.0 && hypothesis.scale.is_finite()) {
            continue;
        }
        let n = count(&hypothesis, &sample);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, hypothesis));
        }
    }
    let (_, mut model) = best.ok_or(DepthAlignError::DegenerateDepth)?;

    // Refine on the full joint-valid set until the inlier set stops changing.
    let mut inlier_mask: Vec<bool> = pairs.iter().map(|(r, m)| model.is_inlier(*r, *m, tol)).collect();
    for _ in 0..10 {
        let inliers = pairs.iter().zip(&inlier_mask).filter(|(_, keep)| **keep).map(|(p, _)| *p);
        let Some(refined) = least_squares(inliers, cfg.fit_shift) else { break };
        if !(refined.scale > 0.0 && refined.scale.is_finite()) {
            break;
        }
        model = refined;
        let next: Vec<bool> = pairs.iter().map(|(r, m)| model.is_inlier(*r, *m, tol)).collect();
        if next == inlier_mask {
            break;
        }
        inlier_mask = next;
    }
    let inliers = inlier_mask.iter().filter(|b| **b).count();
    Ok(DepthScaleFit { scale: model.scale, shift: model.shift, inlier_ratio: inliers as f64 / pairs.len() as f64, n_samples: sample.len() })
}

/// Row-major grid of camera-frame points with a validity flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePointMap {
    pub width: u32,
    pub height: u32,
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl ScenePointMap {
    pub fn get(&self, u: u32, v: u32) -> Option<Vector3<f64>> {
        let i = v as usize * self.width as usize + u as usize;
        self.valid[i].then_some(self.points[i])
    }

    /// Camera-frame depth (z) as a depth map; invalid pixels are 0.
    pub fn depth(&self) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            values: self.points.iter().zip(&self.valid).map(|(p, ok)| if *ok { p.z as f32 } else { 0.0 }).collect(),
        }
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(p, _)| p)
    }
}

/// Unprojects every valid pixel of `d_rel` at the aligned metric depth.
pub fn unproject_scene(d_rel: &DepthMap, fit: &DepthScaleFit, k: &CameraIntrinsics) -> ScenePointMap {
    let n = d_rel.values.len();
    let mut points = Vec::with_capacity(n);
    let mut valid_mask = Vec::with_capacity(n);
    for v in 0..d_rel.height {
        for u in 0..d_rel.width {
            let r = d_rel.get(u, v);
            let depth = if valid(r) { fit.apply(r as f64) } else { 0.0 };
            match unproject(&Vector2::new(u as f64, v as f64), depth, k) {
                Ok(p) if depth.is_finite() => {
                    points.push(p);
                    valid_mask.push(true);
                }
                _ => {
                    points.push(Vector3::zeros());
                    valid_mask.push(false);
                }
            }
        }
    }
    ScenePointMap { width: d_rel.width, height: d_rel.height, points, valid: valid_mask }
}
