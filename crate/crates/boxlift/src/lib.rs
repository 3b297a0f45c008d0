//! Annotation pipeline, evaluation entry points, synthetic scene generator
//! and the review HTTP service built on `boxlift-core`.

pub mod filter;
pub mod manifest;
pub mod pipeline;
pub mod schema;
pub mod service;
pub mod synth;
