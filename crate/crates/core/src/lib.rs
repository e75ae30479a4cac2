//! Offline toolkit for gaze-driven perception of unknown objects.
//!
//! The crate turns recorded gaze, images, point clouds and camera poses into
//! object labels:
//!
//! - [`heatmap`] encodes gaze windows as normalized occupancy grids and
//!   [`knn`] classifies / regresses boxes from them;
//! - [`gbvs`] computes graph-based visual saliency with the gaze injected
//!   into the Markov chain, and [`roi`] turns the result into a box;
//! - [`distill`] filters location proposals by a gaze point;
//! - [`cloud`] segments the gazed object out of a point cloud;
//! - [`multiview`] generates viewpoints around an object and labels each view;
//! - [`eval`] computes COCO-style detection metrics.

pub mod cloud;
pub mod distill;
pub mod eval;
pub mod gbvs;
pub mod geom;
pub mod imageio;
pub mod heatmap;
pub mod ingest;
pub mod knn;
pub mod multiview;
pub mod roi;
pub mod synth;

pub use geom::{BBox2D, BBox3D, GazePos, GazeSample, PinholeCamera, PointCloud, Raster, RigidTransform};
