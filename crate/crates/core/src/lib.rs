//! Synthetic pose-annotated image datasets from CAD models.
//!
//! CAD meshes are rendered as sketches from sampled viewpoints, reduced to
//! Canny edge maps, and sent with a text prompt to an edge-conditioned image
//! generator. Every output carries its exact rotation annotation.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod edges;
pub mod eval;
pub mod gate;
pub mod generation;
pub mod geometry;
pub mod imaging;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod sampling;
pub mod sheet;
