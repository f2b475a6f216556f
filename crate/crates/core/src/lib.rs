//! Sparse-grid radiance field renderer with a hybrid sparse codec and a
//! deterministic accelerator cycle model.
//!
//! The crate is organized around the rendering pipeline: [`scene`] builds and
//! serializes synthetic inputs, [`geometry`] handles rays/balls/octants,
//! [`features`] evaluates densities, colors and transmittance, [`renderer`]
//! runs the instrumented uniform and geometry-driven pipelines, [`sparse`]
//! implements the bitmap/COO codec, and [`accel_sim`] turns instrumented
//! traces into per-step cycle reports.

pub mod accel_sim;
pub mod features;
pub mod geometry;
pub mod math;
pub mod matrix;
pub mod renderer;
pub mod scene;
pub mod sparse;

pub use math::{Aabb, Mat3, Vec3};
pub use matrix::Matrix;
