//! Synthetic scenes with known ground truth: primitive objects resting on a
//! ground plane in front of a slightly pitched camera, with every pipeline
//! input (depth maps, masks, meshes, matches) derived from the seed.

use std::fs;
use std::path::{Path, PathBuf};

use boxlift_core::boxfit::{fit_tight_box, UpAxis};
use boxlift_core::geometry::{apply_similarity, axis_angle, project, unproject, PointSet};
use boxlift_core::io::{save_depth, save_mask_png, save_mesh};
use boxlift_core::pose::{LiftConfig, Match2D2D};
use boxlift_core::raster::{nearest_pixel, render_depth, DepthMap, InstanceMask, TurntableConfig};
use boxlift_core::{shapes, Box3D, CameraIntrinsics, Pose, SimilarityTransform, TriangleMesh};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{filter_instance, FilterConfig, FilterDecision};
use crate::manifest::{save_json, ImageManifest, ManifestError, ObjectManifest};
use crate::pipeline::annotation_id;
use crate::schema::{save_annotations_atomic, AnnotationFile, AnnotationRecord, ImageRecord, Provenance, SchemaError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least one object")]
    NoObjects,
    #[error("could not place object {0} without overlap")]
    Placement(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Raster(#[from] boxlift_core::raster::RasterError),
    #[error(transparent)]
    Format(#[from] boxlift_core::io::FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Sphere,
    Cylinder,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "box" => Some(Self::Box),
            "sphere" => Some(Self::Sphere),
            "cylinder" => Some(Self::Cylinder),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Box => "box",
            Self::Sphere => "sphere",
            Self::Cylinder => "cylinder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub shapes: Vec<ShapeKind>,
    /// Relative standard deviation of multiplicative metric-depth noise.
    pub depth_noise: f64,
    /// Fraction of matches whose real-image pixel is replaced by a random one.
    pub outlier_rate: f64,
    /// Gaussian pixel noise on real-image match locations.
    pub match_noise_px: f64,
    pub matches_per_object: usize,
    /// Metric depth = relative depth × this.
    pub depth_scale: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub camera_height: f64,
    pub pitch_deg: f64,
    pub render: TurntableConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_objects: 5,
            shapes: vec![ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Cylinder],
            depth_noise: 0.0,
            outlier_rate: 0.2,
            match_noise_px: 0.5,
            matches_per_object: 300,
            depth_scale: 2.5,
            width: 640,
            height: 480,
            focal: 500.0,
            camera_height: 1.6,
            pitch_deg: 10.0,
            render: TurntableConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticObject {
    pub object_id: String,
    pub shape: ShapeKind,
    /// Mesh in its canonical frame, normalised to unit bounding radius.
    pub canonical: TriangleMesh,
    /// Canonical → camera.
    pub transform: SimilarityTransform,
    pub gt_box: Box3D,
    pub mask: InstanceMask,
    pub elevation_deg: f64,
    pub matches: Vec<Match2D2D>,
    /// Fails the instance filter; excluded from accuracy checks.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub image_id: String,
    pub k: CameraIntrinsics,
    pub depth_true: DepthMap,
    pub relative_depth: DepthMap,
    pub metric_depth: DepthMap,
    pub objects: Vec<SyntheticObject>,
    pub config: SynthConfig,
}

/// Ground-truth transforms written next to the scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub seed: u64,
    pub depth_scale: f64,
    pub objects: Vec<ObjectTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub object_id: String,
    pub shape: ShapeKind,
    pub scale: f64,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub degenerate: bool,
}

/// Level (gravity-aligned) frame → camera rotation for a downward pitch.
fn pitch_rotation(pitch_deg: f64) -> Matrix3<f64> {
    let p = pitch_deg.to_radians();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, p.cos(), -p.sin(), 0.0, p.sin(), p.cos())
}

fn ground_plane(y: f64) -> TriangleMesh {
    let v = vec![Vector3::new(-40.0, y, 0.5), Vector3::new(40.0, y, 0.5), Vector3::new(40.0, y, 80.0), Vector3::new(-40.0, y, 80.0)];
    TriangleMesh { vertices: v, faces: vec![[0, 1, 2], [0, 2, 3]] }
}

/// Real-size primitive, its height, and its horizontal bounding radius.
fn sample_shape(kind: ShapeKind, rng: &mut ChaCha8Rng) -> (TriangleMesh, f64, f64) {
    match kind {
        ShapeKind::Box => {
            // Footprint aspect ≥ 1.3 keeps the principal horizontal axis well defined.
            let w = rng.random_range(0.5..1.0);
            let l = w * rng.random_range(1.3..2.0);
            let h = rng.random_range(0.4..1.2);
            (shapes::cuboid(Vector3::new(l, h, w)), h, 0.5 * (w * w + l * l).sqrt())
        }
        ShapeKind::Sphere => {
            let r = rng.random_range(0.3..0.6);
            (shapes::uv_sphere(r, 24, 48), 2.0 * r, r)
        }
        ShapeKind::Cylinder => {
            let r = rng.random_range(0.25..0.5);
            let h = rng.random_range(0.5..1.2);
            (shapes::cylinder(r, h, 48), h, r)
        }
    }
}

fn image_bounds(mesh: &TriangleMesh, k: &CameraIntrinsics) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for v in &mesh.vertices {
        let (px, _) = project(v, k).ok()?;
        b = [b[0].min(px.x), b[1].min(px.y), b[2].max(px.x), b[3].max(px.y)];
    }
    Some(b)
}

fn overlaps(a: &[f64; 4], b: &[f64; 4], margin: f64) -> bool {
    a[0] - margin <= b[2] && b[0] - margin <= a[2] && a[1] - margin <= b[3] && b[1] - margin <= a[3]
}

/// Camera elevation and azimuth (degrees) as seen from the canonical mesh,
/// in the turntable convention.
pub fn view_angles(canonical: &TriangleMesh, transform: &SimilarityTransform) -> (f64, f64) {
    let cam = transform.inverse().apply(&Vector3::zeros());
    let d = (cam - canonical.centroid()).normalize();
    ((-d.y).clamp(-1.0, 1.0).asin().to_degrees(), d.x.atan2(-d.z).to_degrees())
}

fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

struct Placed {
    canonical: TriangleMesh,
    shape: ShapeKind,
    transform: SimilarityTransform,
    posed: TriangleMesh,
}

fn place_objects(cfg: &SynthConfig, k: &CameraIntrinsics, rng: &mut ChaCha8Rng) -> Result<Vec<Placed>, SynthError> {
    let pitch = pitch_rotation(cfg.pitch_deg);
    let margin = 12.0;
    let mut placed: Vec<(Placed, Vector3<f64>, f64, [f64; 4])> = Vec::new();
    for i in 0..cfg.n_objects {
        let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let mut ok = None;
        for _ in 0..2000 {
            let (mesh, h, r_h) = sample_shape(kind, rng);
            let z = rng.random_range(4.5..9.0);
            let x = z * rng.random_range(-28f64..28.0).to_radians().tan();
            let level = Vector3::new(x, cfg.camera_height - 0.5 * h, z);
            if placed.iter().any(|(_, c, r, _)| (Vector2::new(c.x - level.x, c.z - level.z)).norm() < r + r_h + 0.3) {
                continue;
            }
            let s = mesh.radius_about(&Vector3::zeros());
            let canonical = TriangleMesh { vertices: mesh.vertices.iter().map(|v| v / s).collect(), faces: mesh.faces.clone() };
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let rotation = pitch * axis_angle(&Vector3::y(), yaw);
            let transform = SimilarityTransform::new(s, Pose { rotation, translation: pitch * level }).expect("valid similarity");
            let posed = apply_similarity(&canonical, &transform);
            let Some(bounds) = image_bounds(&posed, k) else { continue };
            let inside =
                bounds[0] >= margin && bounds[1] >= margin && bounds[2] <= k.width as f64 - 1.0 - margin && bounds[3] <= k.height as f64 - 1.0 - margin;
            if !inside || placed.iter().any(|(_, _, _, b)| overlaps(b, &bounds, 6.0)) {
                continue;
            }
            ok = Some((Placed { canonical, shape: kind, transform, posed }, level, r_h, bounds));
            break;
        }
        placed.push(ok.ok_or(SynthError::Placement(i))?);
    }
    Ok(placed.into_iter().map(|(p, ..)| p).collect())
}

/// Matches between the real image and turntable views within 60° azimuth of
/// the true viewpoint, kept only where the surface point is visible in the
/// real image.
#[allow(clippy::too_many_arguments)]
fn synth_matches(
    p: &Placed,
    mask: &InstanceMask,
    depth_true: &DepthMap,
    k: &CameraIntrinsics,
    elevation: f64,
    azimuth: f64,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Match2D2D>, SynthError> {
    let views = cfg.render.render(&p.canonical, elevation)?;
    let border = LiftConfig::default().border_px + 1.0;
    let mut cands = Vec::new();
    for view in &views {
        let view_az = view.view_id as f64 * 360.0 / cfg.render.n_views as f64;
        if angle_diff_deg(view_az, azimuth) > 60.0 {
            continue;
        }
        let inv = view.pose.inverse();
        let (w, h) = (view.depth.width, view.depth.height);
        for v in (0..h).step_by(3) {
            for u in (0..w).step_by(3) {
                let (uf, vf) = (u as f64, v as f64);
                if uf.min(vf).min(w as f64 - 1.0 - uf).min(h as f64 - 1.0 - vf) < border {
                    continue;
                }
                let d = view.depth.get(u, v);
                if !DepthMap::is_valid_value(d) {
                    continue;
                }
                let x1 = Vector2::new(uf, vf);
                let Ok(cam) = unproject(&x1, d as f64, &view.intrinsics) else { continue };
                let world = p.transform.apply(&inv.transform(&cam));
                let Ok((x0, z)) = project(&world, k) else { continue };
                let Some((pu, pv)) = nearest_pixel(&x0, k.width, k.height) else { continue };
                let scene_z = depth_true.get(pu, pv) as f64;
                if mask.get(pu, pv) && (scene_z - z).abs() <= 0.02 * z {
                    cands.push(Match2D2D { x0, x1, view_id: view.view_id, confidence: 1.0 });
                }
            }
        }
    }
    cands.shuffle(rng);
    cands.truncate(cfg.matches_per_object);

    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    for m in &cands {
        lo = lo.inf(&m.x0);
        hi = hi.sup(&m.x0);
    }
    let noise = Normal::new(0.0, cfg.match_noise_px.max(0.0)).map_err(|e| SynthError::Config(e.to_string()))?;
    for m in cands.iter_mut() {
        if rng.random_bool(cfg.outlier_rate) {
            m.x0 = Vector2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        } else if cfg.match_noise_px > 0.0 {
            m.x0 += Vector2::new(noise.sample(rng), noise.sample(rng));
        }
    }
    Ok(cands)
}

pub fn generate_synthetic_scene(seed: u64, cfg: &SynthConfig) -> Result<SyntheticScene, SynthError> {
    if cfg.n_objects == 0 {
        return Err(SynthError::NoObjects);
    }
    if cfg.shapes.is_empty() || !(0.0..=1.0).contains(&cfg.outlier_rate) || cfg.depth_scale.is_nan() || cfg.depth_scale <= 0.0 || cfg.depth_noise < 0.0 {
        return Err(SynthError::Config(format!("{cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = CameraIntrinsics::new(cfg.focal, cfg.focal, (cfg.width as f64 - 1.0) / 2.0, (cfg.height as f64 - 1.0) / 2.0, cfg.width, cfg.height)
        .map_err(|e| SynthError::Config(e.to_string()))?;
    let placed = place_objects(cfg, &k, &mut rng)?;

    let pitch = Pose { rotation: pitch_rotation(cfg.pitch_deg), translation: Vector3::zeros() };
    let ground = ground_plane(cfg.camera_height);
    // The ground is given in the level frame; objects are already in the camera frame.
    let ground_cam = TriangleMesh { vertices: ground.vertices.iter().map(|v| pitch.transform(v)).collect(), faces: ground.faces };
    let scene_mesh = TriangleMesh::merge(std::iter::once(&ground_cam).chain(placed.iter().map(|p| &p.posed)));
    let depth_true = render_depth(&scene_mesh, &k, &Pose::identity())?;

    let noise = Normal::new(0.0, cfg.depth_noise).map_err(|e| SynthError::Config(e.to_string()))?;
    let relative_depth =
        DepthMap { values: depth_true.values.iter().map(|&d| if d > 0.0 { (d as f64 / cfg.depth_scale) as f32 } else { 0.0 }).collect(), ..depth_true.clone() };
    let metric_depth = DepthMap {
        values: depth_true
            .values
            .iter()
            .map(|&d| if d > 0.0 && cfg.depth_noise > 0.0 { (d as f64 * (1.0 + noise.sample(&mut rng))).max(0.0) as f32 } else { d })
            .collect(),
        ..depth_true.clone()
    };

    let image_id = format!("synth_{seed:04}");
    let mut objects = Vec::with_capacity(placed.len());
    for (i, p) in placed.iter().enumerate() {
        let own = render_depth(&p.posed, &k, &Pose::identity())?;
        let mask =
            InstanceMask { width: k.width, height: k.height, values: own.values.iter().zip(&depth_true.values).map(|(&o, &s)| o > 0.0 && o <= s).collect() };
        let up = UpAxis::new(p.transform.pose.rotation * Vector3::new(0.0, -1.0, 0.0)).expect("unit up");
        // Round primitives have no preferred heading; their boxes are camera-aligned.
        let yaw = match p.shape {
            ShapeKind::Box => up.yaw_of(&(p.transform.pose.rotation * Vector3::x())),
            ShapeKind::Sphere | ShapeKind::Cylinder => 0.0,
        };
        let gt_box = fit_tight_box(&PointSet { points: p.posed.vertices.clone() }, &up, yaw).expect("non-empty mesh");
        let (elevation_deg, azimuth) = view_angles(&p.canonical, &p.transform);
        let matches = synth_matches(p, &mask, &depth_true, &k, elevation_deg, azimuth, cfg, &mut rng)?;
        let degenerate = filter_instance(&mask, &FilterConfig::default()) != FilterDecision::Keep;
        objects.push(SyntheticObject {
            object_id: format!("obj{i}"),
            shape: p.shape,
            canonical: p.canonical.clone(),
            transform: p.transform,
            gt_box,
            mask,
            elevation_deg,
            matches,
            degenerate,
        });
    }
    Ok(SyntheticScene { seed, image_id, k, depth_true, relative_depth, metric_depth, objects, config: cfg.clone() })
}

impl SyntheticScene {
    pub fn manifest(&self) -> ImageManifest {
        ImageManifest {
            image_id: self.image_id.clone(),
            width: self.k.width,
            height: self.k.height,
            relative_depth: "depth_relative.pfm".into(),
            metric_depth: "depth_metric.pfm".into(),
            k: self.k.to_row_major(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectManifest {
                    object_id: o.object_id.clone(),
                    category: o.shape.name().into(),
                    mask: format!("masks/{}.png", o.object_id).into(),
                    amodal: false,
                    mesh: format!("meshes/{}.obj", o.object_id).into(),
                    elevation_deg: o.elevation_deg,
                    correspondences_round1: format!("matches/{}_r1.json", o.object_id).into(),
                    correspondences_round2: None,
                    render: self.config.render,
                })
                .collect(),
        }
    }

    /// Ground-truth boxes as an annotation document; degenerate objects are
    /// marked `ignore`.
    pub fn ground_truth(&self) -> AnnotationFile {
        AnnotationFile {
            images: vec![ImageRecord::new(self.image_id.clone(), &self.k)],
            annotations: self
                .objects
                .iter()
                .map(|o| {
                    let mut a = AnnotationRecord::with_box(
                        annotation_id(&self.image_id, &o.object_id),
                        self.image_id.clone(),
                        o.shape.name().into(),
                        &o.gt_box,
                        1.0,
                        Provenance::Auto,
                    );
                    a.ignore = o.degenerate;
                    a
                })
                .collect(),
            audit: Vec::new(),
        }
    }

    pub fn truth(&self) -> SceneTruth {
        SceneTruth {
            seed: self.seed,
            depth_scale: self.config.depth_scale,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectTruth {
                    object_id: o.object_id.clone(),
                    shape: o.shape,
                    scale: o.transform.scale,
                    rotation: boxlift_core::geometry::row_major(&o.transform.pose.rotation),
                    translation: o.transform.pose.translation.into(),
                    degenerate: o.degenerate,
                })
                .collect(),
        }
    }

    /// Writes every scene file under `dir` and returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, SynthError> {
        for sub in ["masks", "meshes", "matches"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|source| SynthError::Io { path: p, source })?;
        }
        save_depth(&dir.join("depth_relative.pfm"), &self.relative_depth)?;
        save_depth(&dir.join("depth_metric.pfm"), &self.metric_depth)?;
        for o in &self.objects {
            save_mask_png(&dir.join(format!("masks/{}.png", o.object_id)), &o.mask)?;
            save_mesh(&dir.join(format!("meshes/{}.obj", o.object_id)), &o.canonical)?;
            save_json(&dir.join(format!("matches/{}_r1.json", o.object_id)), &o.matches)?;
        }
        save_json(&dir.join("truth.json"), &self.truth())?;
        save_annotations_atomic(&dir.join("ground_truth.json"), &self.ground_truth(), None)?;
        let manifest = dir.join("manifest.json");
        save_json(&manifest, &self.manifest())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use boxlift_core::depth_align::{fit_depth_scale, DepthFitConfig};
    use boxlift_core::metrics::iou3d;

    #[test]
    fn pitch_rotation_is_proper() {
        let r = pitch_rotation(10.0);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        // Level forward axis tilts upward in the image (towards −y) when pitching down.
        assert!((r * Vector3::z()).y < 0.0);
    }

    #[test]
    fn hidden_scale_recovered() {
        let cfg = SynthConfig { n_objects: 3, ..Default::default() };
        let scene = generate_synthetic_scene(1, &cfg).unwrap();
        let fit = fit_depth_scale(&scene.relative_depth, &scene.metric_depth, &DepthFitConfig::default()).unwrap();
        assert!((fit.scale - 2.5).abs() < 1e-6, "{}", fit.scale);
    }

    #[test]
    fn objects_are_visible_and_match() {
        let scene = generate_synthetic_scene(2, &SynthConfig { outlier_rate: 0.0, match_noise_px: 0.0, ..Default::default() }).unwrap();
        assert_eq!(scene.objects.len(), 5);
        for o in &scene.objects {
            assert!(o.mask.area() > 0);
            assert!(o.matches.len() >= 50, "{} has {} matches", o.object_id, o.matches.len());
            // Ground-truth box matches the posed primitive.
            let posed = apply_similarity(&o.canonical, &o.transform);
            assert!(posed.vertices.iter().all(|v| o.gt_box.contains(v, 1e-9)));
            if o.shape == ShapeKind::Box {
                let reference =
                    Box3D::new(o.transform.pose.translation, o.gt_box.dims, o.transform.pose.rotation * Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)))
                        .unwrap();
                assert!(iou3d(&reference, &o.gt_box) > 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_files() {
        let cfg = SynthConfig { n_objects: 2, ..Default::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic_scene(9, &cfg).unwrap().write(a.path()).unwrap();
        generate_synthetic_scene(9, &cfg).unwrap().write(b.path()).unwrap();
        for rel in [
            "manifest.json",
            "depth_relative.pfm",
            "depth_metric.pfm",
            "ground_truth.json",
            "truth.json",
            "masks/obj1.png",
            "meshes/obj0.obj",
            "matches/obj1_r1.json",
        ] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }

    #[test]
    fn zero_objects_rejected() {
        assert!(matches!(generate_synthetic_scene(0, &SynthConfig { n_objects: 0, ..Default::default() }), Err(SynthError::NoObjects)));
    }
}
