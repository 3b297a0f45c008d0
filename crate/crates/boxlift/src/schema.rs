//! Annotation document: images, per-object boxes and the review audit log,
//! stored as one JSON file and replaced atomically on every write.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use boxlift_core::geometry::{from_row_major, row_major, GeometryError};
use boxlift_core::metrics::{Detection, GroundTruth};
use boxlift_core::{Box3D, CameraIntrinsics};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid annotation JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid annotation document: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Auto,
    Refined,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Intrinsic matrix, row-major.
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(default, skip_serializing_if = "is_false")]
    pub rejected: bool,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, k: &CameraIntrinsics) -> Self {
        Self { id: id.into(), width: k.width, height: k.height, k: k.to_row_major(), rejected: false }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, GeometryError> {
        CameraIntrinsics::from_row_major(&self.k, self.width, self.height)
    }
}

/// Box in the camera frame as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxJson {
    #[serde(alias = "center_cam")]
    pub center: [f64; 3],
    pub dims: [f64; 3],
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
}

impl BoxJson {
    pub fn from_box(b: &Box3D) -> Self {
        Self { center: b.center.into(), dims: b.dims.into(), rotation: row_major(&b.rotation) }
    }

    pub fn to_box(&self) -> Result<Box3D, GeometryError> {
        Box3D::new(Vector3::from(self.center), Vector3::from(self.dims), from_row_major(&self.rotation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub image_id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_cam: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[f64; 3]>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
    pub score: f64,
    pub provenance: Provenance,
    /// Stage-tagged failure reason such as `scale:EmptyOverlap`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub revision: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub ignore: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl AnnotationRecord {
    pub fn with_box(id: String, image_id: String, category: String, b: &Box3D, score: f64, provenance: Provenance) -> Self {
        let j = BoxJson::from_box(b);
        Self {
            id,
            image_id,
            category,
            center_cam: Some(j.center),
            dims: Some(j.dims),
            rotation: Some(j.rotation),
            score,
            provenance,
            reason: None,
            revision: 0,
            ignore: false,
        }
    }

    pub fn rejected(id: String, image_id: String, category: String, reason: String) -> Self {
        Self {
            id,
            image_id,
            category,
            center_cam: None,
            dims: None,
            rotation: None,
            score: 0.0,
            provenance: Provenance::Rejected,
            reason: Some(reason),
            revision: 0,
            ignore: false,
        }
    }

    /// The stored box, if any.
    pub fn bbox(&self) -> Result<Option<Box3D>, GeometryError> {
        match (self.center_cam, self.dims, self.rotation) {
            (Some(center), Some(dims), Some(rotation)) => BoxJson { center, dims, rotation }.to_box().map(Some),
            (None, None, None) => Ok(None),
            _ => Err(GeometryError::NonFinite),
        }
    }

    pub fn set_box(&mut self, b: &Box3D) {
        let j = BoxJson::from_box(b);
        self.center_cam = Some(j.center);
        self.dims = Some(j.dims);
        self.rotation = Some(j.rotation);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub unix_time: u64,
    pub action: String,
    pub target: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<AuditEntry>,
}

impl AnnotationFile {
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut image_ids = std::collections::HashSet::new();
        for im in &self.images {
            if !image_ids.insert(im.id.as_str()) {
                return Err(SchemaError::Invalid(format!("duplicate image id {:?}", im.id)));
            }
            im.intrinsics().map_err(|e| SchemaError::Invalid(format!("image {:?}: {e}", im.id)))?;
        }
        let mut ann_ids = std::collections::HashSet::new();
        for a in &self.annotations {
            if !ann_ids.insert(a.id.as_str()) {
                return Err(SchemaError::Invalid(format!("duplicate annotation id {:?}", a.id)));
            }
            if !image_ids.contains(a.image_id.as_str()) {
                return Err(SchemaError::Invalid(format!("annotation {:?} references unknown image {:?}", a.id, a.image_id)));
            }
            a.bbox().map_err(|e| SchemaError::Invalid(format!("annotation {:?}: {e}", a.id)))?;
            if !(0.0..=1.0).contains(&a.score) {
                return Err(SchemaError::Invalid(format!("annotation {:?}: score {} outside [0, 1]", a.id, a.score)));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Scored boxes of non-rejected records on non-rejected images.
    pub fn detections(&self) -> Result<Vec<Detection>, SchemaError> {
        self.usable_boxes()?.map(|(a, b)| Ok(Detection { bbox: b, category: a.category.clone(), score: a.score, image_id: a.image_id.clone() })).collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruth>, SchemaError> {
        self.usable_boxes()?.map(|(a, b)| Ok(GroundTruth { bbox: b, category: a.category.clone(), image_id: a.image_id.clone(), ignore: a.ignore })).collect()
    }

    fn usable_boxes(&self) -> Result<impl Iterator<Item = (&AnnotationRecord, Box3D)>, SchemaError> {
        let rejected: std::collections::HashSet<&str> = self.images.iter().filter(|im| im.rejected).map(|im| im.id.as_str()).collect();
        let mut out = Vec::new();
        for a in &self.annotations {
            if a.provenance == Provenance::Rejected || rejected.contains(a.image_id.as_str()) {
                continue;
            }
            let b = a.bbox().map_err(|e| SchemaError::Invalid(format!("annotation {:?}: {e}", a.id)))?;
            if let Some(b) = b {
                out.push((a, b));
            }
        }
        Ok(out.into_iter())
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationFile, SchemaError> {
    let bytes = fs::read(path).map_err(|source| SchemaError::Io { path: path.into(), source })?;
    let doc: AnnotationFile = serde_json::from_slice(&bytes).map_err(|source| SchemaError::Json { path: path.into(), source })?;
    doc.validate()?;
    Ok(doc)
}

/// Writes `doc` to a sibling temp file, syncs it, then renames over `path`.
/// `before_rename` runs between the synced write and the rename.
pub fn save_annotations_atomic(path: &Path, doc: &AnnotationFile, before_rename: Option<&(dyn Fn() + Send + Sync)>) -> Result<(), SchemaError> {
    let io_err = |source| SchemaError::Io { path: path.into(), source };
    let bytes = serde_json::to_vec_pretty(doc).map_err(|source| SchemaError::Json { path: path.into(), source })?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| SchemaError::Invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = File::create(&tmp).map_err(io_err)?;
        f.write_all(&bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    if let Some(hook) = before_rename {
        hook();
    }
    fs::rename(&tmp, path).map_err(io_err)?;
    // Persist the rename itself; not all platforms allow syncing a directory.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}
