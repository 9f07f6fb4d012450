//! End-to-end orchestration: synthetic scenes, sensor simulation, the full
//! model, training, evaluation, ablations and exports.

pub mod ablate;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod export;
pub mod forward;
pub mod model;
pub mod scene;
pub mod sensors;
pub mod train;

pub use ablate::{
    run_ablation, suite_config, AblationTable, Variant, BRANCH_ROWS, COMPONENT_ROWS, SUITE_SEEDS,
};
pub use config::{DataConfig, ModelConfig, RunConfig};
pub use dataset::{prepare_scene, prepare_split, PreparedScene, Split};
pub use eval::{evaluate, evaluate_checkpoint, predict, Evaluation};
pub use export::{occupancy_ply, write_ply};
pub use forward::{forward_backward, forward_pipeline, Forward, ForwardOptions};
pub use model::Model;
pub use scene::{generate_scene, SceneParams, SyntheticScene};
pub use sensors::{render_gt_views, simulate_lidar, GtView, LidarParams};
pub use train::{suite_loss, train, train_on, TrainLog, TrainOutput};
