//! Manifest-driven annotation of one image: scene depth alignment once, then
//! per object filter → turntable render → lift matches → PnP (one or two
//! rounds) → median depth-ratio scale → placement → gravity-aligned box.
//! Object failures become rejected records; they never abort the image.

use std::path::Path;

use boxlift_core::boxfit::{annotate_object, UpAxis, DEFAULT_SAMPLES};
use boxlift_core::depth_align::{fit_depth_scale, unproject_scene, DepthFitConfig, ScenePointMap};
use boxlift_core::io::{load_depth, load_mask_png, load_mesh};
use boxlift_core::pose::{estimate_scale_median, lift_matches, place_object, solve_pnp_ransac, LiftConfig, Match2D2D, PnpConfig, PnpResult};
use boxlift_core::raster::{render, DepthMap, InstanceMask, RenderedView};
use boxlift_core::{Box3D, CameraIntrinsics, TriangleMesh};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{filter_instance, FilterConfig, FilterDecision};
use crate::manifest::{load_matches, resolve, ImageManifest, ManifestError, ObjectManifest};
use crate::schema::{AnnotationRecord, ImageRecord, Provenance};

/// Confidence assigned to automatically generated boxes.
pub const AUTO_SCORE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest invalid: {0}")]
    ManifestInvalid(String),
}

impl From<ManifestError> for PipelineError {
    fn from(e: ManifestError) -> Self {
        Self::ManifestInvalid(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub filter: FilterConfig,
    pub depth: DepthFitConfig,
    pub lift: LiftConfig,
    pub pnp: PnpConfig,
    pub box_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            filter: FilterConfig::default(),
            depth: DepthFitConfig::default(),
            lift: LiftConfig::default(),
            pnp: PnpConfig::default(),
            box_samples: DEFAULT_SAMPLES,
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self { seed, ..Self::default() };
        cfg.depth.seed = seed;
        cfg.pnp.seed = seed;
        cfg
    }

    fn object_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
    }
}

#[derive(Debug, Clone)]
pub struct ImageAnnotation {
    pub image: ImageRecord,
    pub annotations: Vec<AnnotationRecord>,
    /// Metric scene points, absent when depth alignment failed.
    pub scene: Option<ScenePointMap>,
}

/// Failure of one object, tagged with the pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub stage: &'static str,
    pub code: String,
    pub message: String,
}

impl StageFailure {
    fn new(stage: &'static str, err: impl std::fmt::Debug + std::fmt::Display) -> Self {
        Self { stage, code: variant_name(&err), message: err.to_string() }
    }

    pub fn reason(&self) -> String {
        format!("{}:{}", self.stage, self.code)
    }
}

/// `Foo(..)` / `Foo { .. }` / `Foo` → `Foo`.
fn variant_name(err: &impl std::fmt::Debug) -> String {
    let dbg = format!("{err:?}");
    dbg.split(['(', ' ', '{']).next().unwrap_or(&dbg).to_string()
}

/// Scene geometry shared by every object of an image.
pub struct SceneContext {
    pub k: CameraIntrinsics,
    /// Metric depth of the aligned relative map.
    pub depth: DepthMap,
    pub points: ScenePointMap,
}

pub fn align_scene(d_rel: &DepthMap, d_metric: &DepthMap, k: &CameraIntrinsics, cfg: &DepthFitConfig) -> Result<SceneContext, StageFailure> {
    let fit = fit_depth_scale(d_rel, d_metric, cfg).map_err(|e| StageFailure::new("depth", e))?;
    log::debug!("depth scale {:.6} (inliers {:.3})", fit.scale, fit.inlier_ratio);
    let points = unproject_scene(d_rel, &fit, k);
    Ok(SceneContext { k: *k, depth: points.depth(), points })
}

/// One PnP round against the given rendered views.
pub fn pnp_round(
    matches: &[Match2D2D],
    views: &[RenderedView],
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
    seed: u64,
    stage: &'static str,
) -> Result<PnpResult, StageFailure> {
    let corrs = lift_matches(matches, views, &cfg.lift).map_err(|e| StageFailure::new("lift", e))?;
    let pnp_cfg = PnpConfig { seed, ..cfg.pnp };
    solve_pnp_ransac(&corrs, k, &pnp_cfg).map_err(|e| StageFailure::new(stage, e))
}

/// Renders the canonical mesh through the real camera at the estimated pose.
pub fn render_at_pose(mesh: &TriangleMesh, k: &CameraIntrinsics, pnp: &PnpResult) -> Result<RenderedView, StageFailure> {
    render(mesh, k, &pnp.pose).map_err(|e| StageFailure::new("render", e))
}

/// Estimated box for one object, plus the pose chain that produced it.
#[derive(Debug, Clone)]
pub struct ObjectEstimate {
    pub bbox: Box3D,
    pub pnp: PnpResult,
    pub scale: f64,
}

pub fn estimate_object(
    obj: &ObjectManifest,
    mask: &InstanceMask,
    mesh: &TriangleMesh,
    base: &Path,
    scene: &SceneContext,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ObjectEstimate, StageFailure> {
    let k = &scene.k;
    let views = obj.render.render(mesh, obj.elevation_deg).map_err(|e| StageFailure::new("render", e))?;
    let matches = load_matches(&resolve(base, &obj.correspondences_round1)).map_err(|e| StageFailure::new("input", e))?;
    let mut pnp = pnp_round(&matches, &views, k, cfg, seed, "pnp")?;

    if let Some(path) = &obj.correspondences_round2 {
        let matches = load_matches(&resolve(base, path)).map_err(|e| StageFailure::new("input", e))?;
        // Round-2 matches refer to a single re-render at the round-1 pose (view id 0).
        let view = render_at_pose(mesh, k, &pnp)?;
        pnp = pnp_round(&matches, &[view], k, cfg, seed ^ 0x5EED, "pnp2")?;
    }

    let rendered = render_at_pose(mesh, k, &pnp)?;
    let scale = estimate_scale_median(&scene.depth, &rendered.depth, mask, &rendered.mask).map_err(|e| StageFailure::new("scale", e))?;
    let (posed, transform) = place_object(mesh, &pnp, scale).map_err(|e| StageFailure::new("place", e))?;
    let up = UpAxis::new(transform.pose.rotation * Vector3::new(0.0, -1.0, 0.0)).map_err(|e| StageFailure::new("box", e))?;
    let bbox = annotate_object(&posed, &up, cfg.box_samples, seed).map_err(|e| StageFailure::new("box", e))?;
    Ok(ObjectEstimate { bbox, pnp, scale })
}

pub fn annotation_id(image_id: &str, object_id: &str) -> String {
    format!("{image_id}/{object_id}")
}

fn annotate_one(
    obj: &ObjectManifest,
    index: usize,
    m: &ImageManifest,
    base: &Path,
    scene: &Result<SceneContext, StageFailure>,
    cfg: &PipelineConfig,
) -> AnnotationRecord {
    let id = annotation_id(&m.image_id, &obj.object_id);
    let reject = |f: StageFailure| {
        log::info!("{id}: rejected at {} ({})", f.stage, f.message);
        AnnotationRecord::rejected(id.clone(), m.image_id.clone(), obj.category.clone(), f.reason())
    };
    let mask = match load_mask_png(&resolve(base, &obj.mask)) {
        Ok(mask) if mask.same_size(m.width, m.height) => mask,
        Ok(mask) => {
            return reject(StageFailure { stage: "input", code: "DimensionMismatch".into(), message: format!("mask is {}x{}", mask.width, mask.height) })
        }
        Err(e) => return reject(StageFailure::new("input", e)),
    };
    if let FilterDecision::Drop(reason) = filter_instance(&mask, &cfg.filter) {
        return reject(StageFailure { stage: "filter", code: reason.code().into(), message: format!("mask area {}", mask.area()) });
    }
    let scene = match scene {
        Ok(s) => s,
        Err(f) => return reject(f.clone()),
    };
    let mesh = match load_mesh(&resolve(base, &obj.mesh)) {
        Ok(mesh) => mesh,
        Err(e) => return reject(StageFailure::new("input", e)),
    };
    match estimate_object(obj, &mask, &mesh, base, scene, cfg, cfg.object_seed(index)) {
        Ok(est) => {
            log::info!("{id}: scale {:.4}, {} PnP inliers", est.scale, est.pnp.inlier_indices.len());
            AnnotationRecord::with_box(id, m.image_id.clone(), obj.category.clone(), &est.bbox, AUTO_SCORE, Provenance::Auto)
        }
        Err(f) => reject(f),
    }
}

/// Annotates every object of the manifest. `base` is the directory relative
/// paths are resolved against.
pub fn annotate_image(m: &ImageManifest, base: &Path, cfg: &PipelineConfig) -> Result<ImageAnnotation, PipelineError> {
    m.validate()?;
    let k = m.intrinsics()?;
    let image = ImageRecord::new(m.image_id.clone(), &k);
    if m.objects.is_empty() {
        return Ok(ImageAnnotation { image, annotations: Vec::new(), scene: None });
    }
    let load = |p: &Path| load_depth(&resolve(base, p), m.width, m.height).map_err(|e| PipelineError::ManifestInvalid(format!("{}: {e}", p.display())));
    let d_rel = load(&m.relative_depth)?;
    let d_metric = load(&m.metric_depth)?;
    let scene = align_scene(&d_rel, &d_metric, &k, &cfg.depth);

    let annotations = m.objects.par_iter().enumerate().map(|(i, obj)| annotate_one(obj, i, m, base, &scene, cfg)).collect();
    Ok(ImageAnnotation { image, annotations, scene: scene.ok().map(|s| s.points) })
}
