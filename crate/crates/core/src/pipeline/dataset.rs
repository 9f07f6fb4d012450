//! Scene generation plus every per-scene input the model consumes, computed once.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use super::scene::{generate_scene, SceneParams, SyntheticScene};
use super::sensors::{
    camera_ring, perturb_extrinsics, render_gt_views, simulate_lidar, GtView, LidarParams,
};
use crate::geometry::{
    lidar_depth_map, pool_points, CameraModel, DepthBins, DepthMap, LiftPlan, PointCloud,
    PooledCells,
};
use crate::nn::DenseArray;
use crate::render::{generate_rays, RayBundle};
use crate::Result;

/// Inputs per low-resolution pixel: block-mean RGB and normalized `(u, v)`.
pub const PIXEL_INPUT_DIM: usize = 5;

#[derive(Debug, Clone)]
pub struct PreparedView {
    /// Camera as the model believes it to be (full resolution).
    pub camera: CameraModel,
    pub gt: GtView,
    /// `[h, w, 5]` at feature resolution.
    pub pixel_input: DenseArray,
    /// Camera-z LiDAR depth at feature resolution, for the depth-bin loss.
    pub lidar_depth_lo: DepthMap,
    /// Ray-distance LiDAR depth at full resolution, for the rendered-depth loss.
    pub lidar_depth_full: DepthMap,
    pub plan: LiftPlan,
    pub rays: RayBundle,
}

#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: SyntheticScene,
    pub cloud: PointCloud,
    pub pooled: PooledCells,
    pub views: Vec<PreparedView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl RunConfig {
    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            min_objects: self.data.min_objects,
            max_objects: self.data.max_objects,
            ground: self.data.ground,
            ..SceneParams::default()
        }
    }

    pub fn lidar_params(&self) -> LidarParams {
        let d = &self.data;
        LidarParams {
            n_azimuth: d.n_azimuth,
            n_elevation: d.n_elevation,
            elevation_min_deg: d.elevation_min_deg,
            elevation_max_deg: d.elevation_max_deg,
            noise_sigma: d.range_noise,
            intensity_noise: d.intensity_noise,
            max_range: d.max_range,
        }
    }

    pub fn cameras(&self) -> Result<Vec<CameraModel>> {
        let d = &self.data;
        camera_ring(
            d.n_cameras,
            d.camera_height,
            d.hfov_deg,
            d.image_w,
            d.image_h,
        )
    }

    pub fn depth_bin_spec(&self) -> Result<DepthBins> {
        DepthBins::new(self.depth_bins, self.near, self.far)
    }

    /// Seed of scene `index` in `split`; the two splits never share seeds.
    pub fn scene_seed(&self, split: Split, index: usize) -> u64 {
        let tag: u64 = match split {
            Split::Train => 0x7261_696e,
            Split::Eval => 0x6576_616c,
        };
        self.data_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(tag << 32)
            .wrapping_add(index as u64)
    }
}

/// Block means of `image` over `factor x factor` tiles plus pixel coordinates in `[-1, 1]`.
pub fn pixel_inputs(image: &DenseArray, factor: usize) -> DenseArray {
    let (hh, ww) = (image.shape()[0], image.shape()[1]);
    let (h, w) = (hh / factor, ww / factor);
    let mut out = DenseArray::zeros(vec![h, w, PIXEL_INPUT_DIM]);
    let norm = 1.0 / (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 3];
            for y in r * factor..(r + 1) * factor {
                for x in c * factor..(c + 1) * factor {
                    let p = image.row(y * ww + x);
                    for k in 0..3 {
                        acc[k] += p[k];
                    }
                }
            }
            let row = out.row_mut(r * w + c);
            for k in 0..3 {
                row[k] = acc[k] * norm;
            }
            row[3] = 2.0 * (c as f64 + 0.5) / w as f64 - 1.0;
            row[4] = 2.0 * (r as f64 + 0.5) / h as f64 - 1.0;
        }
    }
    out
}

pub fn prepare_scene(cfg: &RunConfig, seed: u64) -> Result<PreparedScene> {
    let spec = cfg.grid;
    let scene = generate_scene(seed, &spec, cfg.n_classes, &cfg.scene_params())?;
    let lidar_origin = [0.0, 0.0, cfg.data.lidar_height];
    let cloud = simulate_lidar(
        &scene,
        lidar_origin,
        &cfg.lidar_params(),
        seed ^ 0x11da_2000,
    )?;
    let pooled = pool_points(&cloud, &spec);
    let true_cams = cfg.cameras()?;
    let gts = render_gt_views(&scene, &true_cams)?;
    let bins = cfg.depth_bin_spec()?;
    let mut calib_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca11_b000);
    let mut views = Vec::with_capacity(true_cams.len());
    for (cam, gt) in true_cams.iter().zip(gts) {
        let camera = perturb_extrinsics(cam, cfg.data.calib_noise_deg, &mut calib_rng)?;
        let low = camera.downsampled(cfg.downsample)?;
        let pixel_input = pixel_inputs(&gt.image, cfg.downsample);
        let lidar_depth_lo = lidar_depth_map(&cloud, &camera, low.image_h, low.image_w)?;
        let lidar_depth_full = lidar_depth_map(&cloud, &camera, camera.image_h, camera.image_w)?
            .to_ray_distance(&camera)?;
        let plan = LiftPlan::new(&low, &spec, bins);
        let rays = generate_rays(&camera, cfg.downsample, cfg.near, cfg.far, cfg.n_samples)?;
        views.push(PreparedView {
            camera,
            gt,
            pixel_input,
            lidar_depth_lo,
            lidar_depth_full,
            plan,
            rays,
        });
    }
    Ok(PreparedScene {
        scene,
        cloud,
        pooled,
        views,
    })
}

/// The `count` scenes of `split`, generated in parallel, returned in index order.
pub fn prepare_split(cfg: &RunConfig, split: Split, count: usize) -> Result<Vec<PreparedScene>> {
    (0..count)
        .into_par_iter()
        .map(|i| prepare_scene(cfg, cfg.scene_seed(split, i)))
        .collect()
}
