//! Geometry engine for lifting 2D observations to metric, gravity-aligned 3D
//! boxes, plus the metrics used to score them.
//!
//! Conventions: camera frame is +x right, +y down, +z forward; pixel centres
//! sit at integer coordinates; poses map world (or mesh) coordinates into the
//! camera frame.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boxfit;
pub mod depth_align;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pose;
pub mod raster;
pub mod shapes;

pub use geometry::{Box3D, CameraIntrinsics, PointSet, Pose, SimilarityTransform, TriangleMesh};
