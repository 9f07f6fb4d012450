//! Training objective: occupancy, explicit depth and rendering terms.

mod depth;
mod labels;
mod occupancy;
mod rendering;
mod total;

pub use depth::{explicit_depth_loss, DepthBinLoss};
pub use labels::{SemanticOccGrid, IGNORE_LABEL};
pub use occupancy::{
    cross_entropy_loss, lovasz_softmax_loss, occupancy_loss, LossValue, OccupancyLoss,
};
pub use rendering::{rendering_color_loss, rendering_depth_loss};
pub use total::{total_loss, Branch, LossComponents, LossReport};

pub const DEFAULT_LAMBDA_RC: f64 = 1.0;
pub const DEFAULT_LAMBDA_RD: f64 = 1.0;
