//! Adversarial garment patches against person detectors.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`geometry`]: garment meshes, stress estimation, control points, and
//!   stochastic thin-plate-spline deformation.
//! - [`scene`]: perspective-consistent placement, rasterization, compositing,
//!   SSIM, and relighting.
//! - [`detect`]: the bundled toy detector, shakedrop, and input gradients.
//! - [`attack`]: patches, 2D transforms, losses, and the training loop.
//! - [`metrics`]: IoU, attack success, corpus reports, sweeps, occlusion.
//! - [`harness`]: run configuration, synthetic corpora, persistence, plots.

pub mod attack;
pub mod bbox;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod scene;
pub mod seed;

pub use bbox::BoundingBox;
pub use error::{Error, Result};
pub use image::{Image, Mask};
