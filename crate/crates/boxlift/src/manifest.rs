//! Per-image input manifest. External model outputs (depth maps, masks,
//! reconstructed meshes, elevation estimates, pixel matches) enter the
//! pipeline only through the files it references.

use std::fs;
use std::path::{Path, PathBuf};

use boxlift_core::pose::Match2D2D;
use boxlift_core::raster::TurntableConfig;
use boxlift_core::CameraIntrinsics;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("manifest invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectManifest {
    pub object_id: String,
    pub category: String,
    pub mask: PathBuf,
    /// The mask and mesh come from an amodally completed crop.
    #[serde(default)]
    pub amodal: bool,
    pub mesh: PathBuf,
    pub elevation_deg: f64,
    pub correspondences_round1: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondences_round2: Option<PathBuf>,
    #[serde(default)]
    pub render: TurntableConfig,
}

/// Paths are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub relative_depth: PathBuf,
    pub metric_depth: PathBuf,
    /// Intrinsic matrix, row-major.
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(default)]
    pub objects: Vec<ObjectManifest>,
}

impl ImageManifest {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, ManifestError> {
        CameraIntrinsics::from_row_major(&self.k, self.width, self.height).map_err(|e| ManifestError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        self.intrinsics()?;
        let mut seen = std::collections::HashSet::new();
        for o in &self.objects {
            if !seen.insert(&o.object_id) {
                return Err(ManifestError::Invalid(format!("duplicate object id {:?}", o.object_id)));
            }
            if !o.elevation_deg.is_finite() {
                return Err(ManifestError::Invalid(format!("object {:?}: non-finite elevation", o.object_id)));
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<ImageManifest, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    let m: ImageManifest = serde_json::from_slice(&bytes).map_err(|source| ManifestError::Json { path: path.into(), source })?;
    m.validate()?;
    Ok(m)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ManifestError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|source| ManifestError::Json { path: path.into(), source })?;
    fs::write(path, bytes).map_err(|source| ManifestError::Io { path: path.into(), source })
}

pub fn load_matches(path: &Path) -> Result<Vec<Match2D2D>, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    serde_json::from_slice(&bytes).map_err(|source| ManifestError::Json { path: path.into(), source })
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
