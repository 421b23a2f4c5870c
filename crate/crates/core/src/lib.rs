//! Drag-driven as-rigid-as-possible editing of 3D Gaussian splat scenes.
//!
//! The crate covers the whole editing path: scene and camera I/O, the
//! deformation graph over a sampled subset of Gaussian centers, the
//! local/global ARAP solver, propagation of the solved deformation to every
//! Gaussian, a deterministic CPU splat renderer, mask-guided appearance
//! refinement and the dragging-accuracy metric.

pub mod arap;
pub mod camera;
pub mod config;
pub mod drag;
pub mod fixtures;
pub mod image;
pub mod knn;
pub mod metrics;
pub mod neighborhood;
pub mod pipeline;
pub mod propagation;
pub mod refine;
pub mod render;
pub mod scene;
pub mod splat_io;

pub use arap::{ArapConfig, ArapState};
pub use camera::{Camera, CameraSet};
pub use config::{PipelineConfig, RunManifest};
pub use drag::{DragSpec, Handle, Region};
pub use image::{ImageBuffer, MaskBuffer};
pub use neighborhood::DeformGraph;
pub use propagation::SubsetTransform;
pub use refine::{RefineConfig, ViewDataset};
pub use render::Splat2D;
pub use scene::{Aabb, GaussianScene};
