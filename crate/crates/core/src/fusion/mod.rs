//! KNN-gated LiDAR-camera fusion.
//!
//! Non-empty LiDAR voxels query their nearest non-empty camera voxels, a learnable
//! gate turns the gathered camera features into a weight `omega`, and the fused
//! volume concatenates `[F_I, F_L, F_L * omega]`.

mod coords;
mod fuse;
mod gate;
mod knn;

pub use coords::{extract_nonempty, CoordList, CoordSource};
pub use fuse::{concat_backward, fuse_baseline_concat, gs_fuse, gs_fuse_backward, FuseGrads};
pub use gate::{
    gather_backward, gather_neighbor_features, knn_gate, knn_gate_backward, GateMode, GateNet,
    GateOutput,
};
pub use knn::{knn_search, NeighborTable, NO_NEIGHBOR};

/// Default search radius in voxel units.
pub const DEFAULT_RADIUS: f64 = 3.0;
/// Default neighbor count.
pub const DEFAULT_K: usize = 2;
