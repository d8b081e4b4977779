//! Learned 3D-to-2D projection of sparsely z-sampled grayscale stacks, a
//! multi-channel flow-based instance segmentation head trained jointly with
//! it, and assignment-based detection metrics.

pub mod augment;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod pen;
pub mod projections;
pub mod raster;
pub mod seghead;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use normalize::normalize_unit;
pub use types::{AnnotationSet, CellAnnotation, ImageStack, RgbProjection, VoxelGeometry};
