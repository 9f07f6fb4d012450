//! Frames, cameras, voxel grids, voxelization and the 2D-to-3D lift.
//!
//! The ego frame is the shared fusion frame and grid axes align with it.

mod camera;
mod cloud;
mod grid;
pub mod lift;
mod project;
pub mod voxelize;

pub use camera::{CameraModel, Mat4, Projection};
pub use cloud::PointCloud;
pub(crate) use grid::{read_spec, write_spec};
pub use grid::{GridSpec, SparseFeatureGrid, DEFAULT_MAX_CELLS};
pub use lift::{
    lift_backward, lift_image_features, lift_views, DepthBins, DepthDistribution, LiftPlan,
    LiftStats, LiftView, Lifted, DEFAULT_LIFT_THRESHOLD,
};
pub use project::{lidar_depth_map, project_to_image, DepthMap};
pub use voxelize::{
    pool_points, voxelize, voxelize_backward, voxelize_cached, PooledCells, Voxelized,
};
