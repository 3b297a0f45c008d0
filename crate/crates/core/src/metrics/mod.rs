//! Evaluation and loss math: exact oriented-box IoU with a Monte-Carlo
//! check, AP₃D/AR₃D, relative-layout AP, and box losses.

mod ap;
mod iou;
mod loss;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use ap::{
    ap_from_outcomes, default_thresholds, evaluate_ap, evaluate_relative, fit_global_scale, greedy_match, parse_thresholds, CategoryResult, Detection,
    EvalResult, GroundTruth, MatchOutcome, RelativeEvalResult, ScaleGrid, ThresholdResult, RECALL_POINTS,
};
pub use iou::{intersection_volume, iou3d, iou3d_oracle, IouEstimate};
pub use loss::{chamfer_box, chamfer_box_with, disentangled_losses, uncertainty_loss, BoxAttributes, DisentangledLosses};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("global scale fit needs at least one prediction/ground-truth pair")]
    EmptyPairs,
    #[error("invalid scale grid {0:?}")]
    InvalidGrid(ScaleGrid),
    #[error("invalid threshold range {0:?}, expected start:step:end")]
    InvalidThresholds(String),
    #[error("depth {0} must be positive")]
    NonPositiveDepth(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
