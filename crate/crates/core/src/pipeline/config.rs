//! Run configuration, loaded from TOML. Every field has a default, so a config
//! file only needs the keys it overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fusion::{GateMode, DEFAULT_K, DEFAULT_RADIUS};
use crate::geometry::{GridSpec, DEFAULT_LIFT_THRESHOLD, DEFAULT_MAX_CELLS};
use crate::losses::{Branch, DEFAULT_LAMBDA_RC, DEFAULT_LAMBDA_RD};
use crate::render::{DepthMode, DEFAULT_DOWNSAMPLE, DEFAULT_N_SAMPLES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub n_classes: usize,
    /// Feature channels `C` of each modality.
    pub channels: usize,
    pub k: usize,
    /// KNN search radius in voxel units.
    pub radius: f64,
    pub gate_mode: GateMode,
    /// `false` replaces the gated fusion with plain concatenation.
    pub use_gsfusion: bool,
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    pub downsample: usize,
    /// Categorical depth bins of the lift, spread over `[near, far)`.
    pub depth_bins: usize,
    pub lift_threshold: f64,
    pub lambda_rc: f64,
    pub lambda_rd: f64,
    pub use_rc: bool,
    pub use_rd: bool,
    /// Camera-only runs may still use projected LiDAR depth for `l_rd`.
    pub has_gt_depth: bool,
    pub depth_mode: DepthMode,
    pub branch: Branch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Model initialization and scene order.
    pub seed: u64,
    /// Scene generation and sensor noise.
    pub data_seed: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
    /// Checkpoint every this many epochs; 0 keeps only the initial and final ones.
    pub checkpoint_every: usize,
    /// Evaluate on the eval split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub model: ModelConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_hidden: usize,
    pub depth_hidden: usize,
    pub occ_hidden: usize,
    pub color_hidden: usize,
    pub color_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub ground: bool,
    pub n_cameras: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub hfov_deg: f64,
    pub camera_height: f64,
    /// Std-dev of the per-scene extrinsic rotation error, degrees.
    pub calib_noise_deg: f64,
    pub lidar_height: f64,
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub range_noise: f64,
    pub intensity_noise: f64,
    pub max_range: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::toy(),
            n_classes: 4,
            channels: 16,
            k: DEFAULT_K,
            radius: DEFAULT_RADIUS,
            gate_mode: GateMode::Scalar,
            use_gsfusion: true,
            n_samples: DEFAULT_N_SAMPLES,
            near: 0.5,
            far: 12.0,
            downsample: DEFAULT_DOWNSAMPLE,
            depth_bins: DEFAULT_N_SAMPLES,
            lift_threshold: DEFAULT_LIFT_THRESHOLD,
            lambda_rc: DEFAULT_LAMBDA_RC,
            lambda_rd: DEFAULT_LAMBDA_RD,
            use_rc: true,
            use_rd: true,
            has_gt_depth: true,
            depth_mode: DepthMode::ExpectedDepth,
            branch: Branch::LidarCamera,
            epochs: 4,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            seed: 0,
            data_seed: 0,
            threads: 1,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 1,
            eval_every: 1,
            model: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_hidden: 32,
            depth_hidden: 32,
            occ_hidden: 32,
            color_hidden: 32,
            color_layers: 2,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_eval: 16,
            min_objects: 4,
            max_objects: 8,
            ground: true,
            n_cameras: 2,
            image_w: 192,
            image_h: 96,
            hfov_deg: 100.0,
            camera_height: 0.5,
            calib_noise_deg: 0.0,
            lidar_height: 1.0,
            n_azimuth: 360,
            n_elevation: 16,
            elevation_min_deg: -30.0,
            elevation_max_deg: 5.0,
            range_noise: 0.0,
            intensity_noise: 0.08,
            max_range: 20.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn depth_range(&self) -> (f64, f64) {
        (self.near, self.far)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate(DEFAULT_MAX_CELLS)?;
        let fail = |m: String| Err(Error::Config(m));
        if !(2..=255).contains(&self.n_classes) {
            return fail(format!(
                "n_classes must be in 2..=255, got {}",
                self.n_classes
            ));
        }
        if self.channels == 0 || self.k == 0 || self.n_samples == 0 || self.depth_bins == 0 {
            return fail("channels, k, n_samples and depth_bins must be positive".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.near >= 0.0 && self.near < self.far && self.far.is_finite()) {
            return fail(format!(
                "need 0 <= near < far, got [{}, {}]",
                self.near, self.far
            ));
        }
        if !(self.lift_threshold >= 0.0 && self.lift_threshold.is_finite()) {
            return fail(format!(
                "lift_threshold must be >= 0, got {}",
                self.lift_threshold
            ));
        }
        for (name, v) in [("lambda_rc", self.lambda_rc), ("lambda_rd", self.lambda_rd)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.batch_size == 0 || self.threads == 0 {
            return fail("batch_size and threads must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay * self.learning_rate < 1.0) {
            return fail(format!("weight_decay {} out of range", self.weight_decay));
        }
        let m = &self.model;
        if m.image_hidden == 0
            || m.depth_hidden == 0
            || m.occ_hidden == 0
            || m.color_hidden == 0
            || m.color_layers == 0
        {
            return fail("model widths and color_layers must be positive".into());
        }
        let d = &self.data;
        if self.downsample == 0
            || d.image_w % self.downsample != 0
            || d.image_h % self.downsample != 0
        {
            return fail(format!(
                "image {}x{} must be a multiple of downsample {}",
                d.image_w, d.image_h, self.downsample
            ));
        }
        if d.n_cameras == 0 && self.branch.uses_camera() {
            return fail(format!("{} branch needs at least one camera", self.branch));
        }
        if d.min_objects > d.max_objects {
            return fail("min_objects exceeds max_objects".into());
        }
        if !(d.hfov_deg > 0.0 && d.hfov_deg < 180.0) {
            return fail(format!("hfov_deg must be in (0, 180), got {}", d.hfov_deg));
        }
        if d.n_azimuth == 0 || d.n_elevation == 0 {
            return fail("lidar needs at least one beam".into());
        }
        if d.elevation_min_deg > d.elevation_max_deg
            || d.elevation_min_deg < -90.0
            || d.elevation_max_deg > 90.0
        {
            return fail("lidar elevation range must be ordered and within [-90, 90]".into());
        }
        for (name, v) in [
            ("calib_noise_deg", d.calib_noise_deg),
            ("range_noise", d.range_noise),
            ("intensity_noise", d.intensity_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(d.max_range > 0.0 && d.max_range.is_finite()) {
            return fail(format!("max_range must be positive, got {}", d.max_range));
        }
        Ok(())
    }

    /// Names for report rows, index = class id.
    pub fn class_names(&self) -> Vec<String> {
        class_names(self.n_classes)
    }
}

pub fn class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes)
        .map(|c| match c {
            0 => "free".to_string(),
            1 => "ground".to_string(),
            c => format!("object_{}", c - 1),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_carry_protocol_values() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k, c.n_samples, c.downsample), (2, 112, 16));
        assert_eq!(
            (c.learning_rate, c.weight_decay, c.batch_size),
            (1e-4, 0.01, 8)
        );
        assert_eq!(c.grid.dims, [8, 32, 32]);
        assert_eq!((c.data.n_train, c.data.n_eval), (64, 16));
    }

    #[test]
    fn toml_round_trip_keeps_full_precision() {
        let mut c = RunConfig::default();
        c.learning_rate = 0.1 + 0.2;
        c.lambda_rd = 1.0 / 3.0;
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let c = RunConfig::from_toml_str(
            "seed = 7\nbranch = \"camera_only\"\n[model]\nocc_hidden = 8\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.branch, Branch::CameraOnly);
        assert_eq!(c.model.occ_hidden, 8);
        assert_eq!(c.model.color_hidden, ModelConfig::default().color_hidden);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "n_classes = 1",
            "near = 5.0\nfar = 1.0",
            "threads = 0",
            "[data]\nimage_w = 100",
            "learning_rate = -1.0",
            "unknown_key = 3",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
