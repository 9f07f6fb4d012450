//! Multi-modal semantic occupancy prediction at desk scale.
//!
//! LiDAR voxels are enriched with neighbouring camera voxel features through a
//! KNN search and a learnable gate, and the fused volume is regularized during
//! training by volume rendering color and depth maps back into the cameras.
//!
//! Module map:
//!
//! - [`nn`]: dense arrays, linear layers, MLPs, AdamW, gradient checking
//! - [`geometry`]: cameras, voxel grids, voxelization, 2D-to-3D lifting
//! - [`fusion`]: non-empty coordinate extraction, KNN search, KNN gate, fusion
//! - [`render`]: rays, trilinear sampling, density/color heads, compositing
//! - [`losses`] and [`metrics`]: training objective and IoU/mIoU evaluation
//! - [`pipeline`]: synthetic scenes, sensor simulation, training and evaluation

mod binio;
mod error;

pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod verify;

pub use error::{Error, Result};
pub use fusion::{CoordList, NeighborTable};
pub use geometry::{CameraModel, GridSpec, PointCloud, SparseFeatureGrid};
pub use losses::{Branch, LossReport, SemanticOccGrid};
pub use metrics::ConfusionMatrix;
pub use nn::{Activation, DenseArray, LinearLayer, Mlp};
pub use pipeline::RunConfig;
pub use render::{RayBundle, RenderedViews};
