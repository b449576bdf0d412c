//! Learns a signed distance function for a single 3D shape from a point
//! cloud by blending learnable per-region latent codes ("surface codes")
//! with geometry-aware affinity weights, then extracts the global surface,
//! per-part meshes, multi-level partitions and convex-hull abstractions.
//!
//! Pipeline (see the `lpi` binary for the CLI front end):
//!
//! 1. [`geom`] — load + normalize the cloud, farthest-point-sample region
//!    centers, build kNN-graph geodesic tables.
//! 2. [`affinity`] — per-query affinity vectors (euclidean / intrinsic /
//!    semantic / average / nearest).
//! 3. [`graph`] + [`net`] — a reverse-mode tape over dense 2D tensors whose
//!    backward pass is itself recorded, so losses that contain input
//!    gradients stay differentiable; the MLP and surface codes live here.
//! 4. [`train`] — query sampling, the pulling / MSE losses, the Adam loop.
//! 5. [`extract`] — marching cubes, nearest-center part masking, releveling,
//!    convex hulls.
//! 6. [`metrics`] — Chamfer, normal consistency, F-score, volumetric IoU.

pub mod adam;
pub mod affinity;
pub mod checkpoint;
pub mod error;
pub mod extract;
pub mod geom;
pub mod graph;
pub mod hull;
pub mod io;
mod mc_tables;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod train;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vec3;
