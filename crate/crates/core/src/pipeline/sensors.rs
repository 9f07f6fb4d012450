//! Sensor simulation by fixed-step ray marching through the ground-truth grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{class_intensity, SyntheticScene};
use crate::geometry::{CameraModel, DepthMap, GridSpec, Mat4, PointCloud};
use crate::nn::DenseArray;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarParams {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Gaussian range noise std-dev, meters.
    pub noise_sigma: f64,
    pub intensity_noise: f64,
    pub max_range: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            n_azimuth: 360,
            n_elevation: 16,
            elevation_min_deg: -30.0,
            elevation_max_deg: 5.0,
            noise_sigma: 0.0,
            intensity_noise: 0.0,
            max_range: 20.0,
        }
    }
}

/// Marching step used by every simulated sensor.
pub fn march_step(spec: &GridSpec) -> f64 {
    spec.voxel_size / 4.0
}

/// First sample `t = i * step` (i >= 1) along the ray inside an occupied voxel.
pub fn march(
    scene: &SyntheticScene,
    origin: [f64; 3],
    dir: [f64; 3],
    max_range: f64,
) -> Option<(f64, usize)> {
    let spec = scene.spec();
    let step = march_step(spec);
    let mut entered = false;
    let mut i = 1usize;
    loop {
        let t = i as f64 * step;
        if t > max_range {
            return None;
        }
        let p = [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ];
        match spec.locate(p) {
            Some(idx) => {
                entered = true;
                let flat = spec.flat(idx);
                if scene.gt_occ.is_occupied(flat) {
                    return Some((t, flat));
                }
            }
            // the grid is convex, so a ray that left it never returns
            None if entered => return None,
            None => {}
        }
        i += 1;
    }
}

/// One return per beam at most. Beams sweep `n_azimuth` evenly spaced headings
/// and `n_elevation` evenly spaced elevations (inclusive range).
pub fn simulate_lidar(
    scene: &SyntheticScene,
    origin: [f64; 3],
    params: &LidarParams,
    seed: u64,
) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| Error::config(format!("range noise: {e}")))?;
    let int_noise = Normal::new(0.0, params.intensity_noise)
        .map_err(|e| Error::config(format!("intensity noise: {e}")))?;
    let n_c = scene.gt_occ.n_classes;
    let mut cloud = PointCloud::new(Vec::new(), None)?;
    for e in 0..params.n_elevation {
        let frac = if params.n_elevation > 1 {
            e as f64 / (params.n_elevation - 1) as f64
        } else {
            0.0
        };
        let el = (params.elevation_min_deg
            + frac * (params.elevation_max_deg - params.elevation_min_deg))
            .to_radians();
        for a in 0..params.n_azimuth {
            let az = std::f64::consts::TAU * a as f64 / params.n_azimuth as f64;
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let Some((t, flat)) = march(scene, origin, dir, params.max_range) else {
                continue;
            };
            let r = t + if params.noise_sigma > 0.0 {
                range_noise.sample(&mut rng)
            } else {
                0.0
            };
            let class = scene.gt_occ.labels[flat] as usize;
            let mut intensity = class_intensity(class, n_c);
            if params.intensity_noise > 0.0 {
                intensity += int_noise.sample(&mut rng);
            }
            let p = [
                origin[0] + r * dir[0],
                origin[1] + r * dir[1],
                origin[2] + r * dir[2],
            ];
            cloud.push(p, intensity.clamp(0.0, 1.0));
        }
    }
    Ok(cloud)
}

/// Ground-truth image of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct GtView {
    /// `[H, W, 3]` RGB, black where the ray misses.
    pub image: DenseArray,
    /// Hit distance along each pixel-center ray.
    pub depth: DepthMap,
}

pub fn render_gt_views(scene: &SyntheticScene, cameras: &[CameraModel]) -> Result<Vec<GtView>> {
    let spec = scene.spec();
    let (lo, hi) = spec.bounds();
    let max_range: f64 = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();
    cameras
        .iter()
        .map(|cam| {
            cam.validate()?;
            let (h, w) = (cam.image_h, cam.image_w);
            let mut image = DenseArray::zeros(vec![h, w, 3]);
            let mut depth = DepthMap::empty(h, w);
            let o = cam.center();
            // origin outside the grid: allow the full distance to reach it
            let reach = max_range
                + o.iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(&p, (&l, &u))| (l - p).max(p - u).max(0.0))
                    .sum::<f64>();
            for row in 0..h {
                for col in 0..w {
                    let (d, _) = cam.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
                    if let Some((t, flat)) = march(scene, o, d, reach) {
                        let px = row * w + col;
                        image.row_mut(px).copy_from_slice(
                            &scene.gt_color[flat].expect("occupied voxel has a color"),
                        );
                        depth.depth[px] = t;
                        depth.mask[px] = true;
                    }
                }
            }
            Ok(GtView { image, depth })
        })
        .collect()
}

/// `cams` rotated about their own vertical (yaw) and horizontal (pitch) axes by
/// Gaussian angles; stands in for extrinsic calibration error.
pub fn perturb_extrinsics(
    cam: &CameraModel,
    sigma_deg: f64,
    rng: &mut impl Rng,
) -> Result<CameraModel> {
    if sigma_deg == 0.0 {
        return Ok(cam.clone());
    }
    let n = Normal::new(0.0, sigma_deg.to_radians())
        .map_err(|e| Error::config(format!("calibration noise: {e}")))?;
    let (yaw, pitch): (f64, f64) = (n.sample(rng), n.sample(rng));
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    // camera frame: y down, so yaw turns about y and pitch about x
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let mut delta = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            delta[i][j] = (0..3).map(|k| ry[i][k] * rx[k][j]).sum();
        }
    }
    let r = cam.rotation();
    let mut m: Mat4 = cam.cam_to_ego;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| r[i][k] * delta[k][j]).sum();
        }
    }
    CameraModel::new(
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.image_w,
        cam.image_h,
        m,
        cam.view_id,
    )
}

/// Level cameras evenly spaced in yaw, the first looking along +x.
pub fn camera_ring(
    n: usize,
    height: f64,
    hfov_deg: f64,
    w: usize,
    h: usize,
) -> Result<Vec<CameraModel>> {
    (0..n)
        .map(|i| {
            let yaw = std::f64::consts::TAU * i as f64 / n as f64;
            CameraModel::looking_at_yaw(
                [0.0, 0.0, height],
                yaw,
                hfov_deg.to_radians(),
                w,
                h,
                i as u32,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scene::Shape;

    fn wall_scene() -> SyntheticScene {
        // wall filling x in [2, 2.5) across the whole grid
        let s = GridSpec::toy();
        let mut scene = SyntheticScene::empty(s, 2, 0).unwrap();
        let w = s.locate([2.1, 0.0, 0.0]).unwrap()[2];
        scene.paint(
            &Shape::Box {
                lo: [0, 0, w],
                hi: [7, 31, w],
            },
            1,
            [1.0, 0.0, 0.0],
        );
        scene
    }

    #[test]
    fn empty_scene_gives_empty_cloud_and_black_images() {
        let scene = SyntheticScene::empty(GridSpec::toy(), 4, 0).unwrap();
        let cloud = simulate_lidar(&scene, [0.0, 0.0, 1.0], &LidarParams::default(), 1).unwrap();
        assert!(cloud.is_empty());
        let cams = camera_ring(2, 0.5, 100.0, 32, 16).unwrap();
        for v in render_gt_views(&scene, &cams).unwrap() {
            assert!(v.image.data().iter().all(|&x| x == 0.0));
            assert_eq!(v.depth.valid_count(), 0);
        }
    }

    #[test]
    fn wall_return_within_one_step() {
        let scene = wall_scene();
        let p = LidarParams {
            n_azimuth: 1,
            n_elevation: 1,
            elevation_min_deg: 0.0,
            elevation_max_deg: 0.0,
            ..LidarParams::default()
        };
        let origin = [0.0, 0.3, 1.0];
        let cloud = simulate_lidar(&scene, origin, &p, 0).unwrap();
        assert_eq!(cloud.len(), 1);
        let r = cloud.points[0][0] - origin[0];
        assert!(r >= 2.0 && r <= 2.0 + march_step(scene.spec()), "{r}");
    }

    #[test]
    fn point_count_bounded_by_beams() {
        let s = GridSpec::toy();
        let scene = super::super::scene::generate_scene(4, &s, 4, &Default::default()).unwrap();
        let p = LidarParams {
            n_azimuth: 90,
            n_elevation: 8,
            noise_sigma: 0.02,
            intensity_noise: 0.05,
            ..LidarParams::default()
        };
        let cloud = simulate_lidar(&scene, [0.0, 0.0, 1.0], &p, 9).unwrap();
        assert!(cloud.len() <= 90 * 8);
        assert!(!cloud.is_empty());
        assert_eq!(
            cloud,
            simulate_lidar(&scene, [0.0, 0.0, 1.0], &p, 9).unwrap()
        );
    }

    #[test]
    fn red_wall_view_is_red_with_plane_depth() {
        let scene = wall_scene();
        let cam = CameraModel::looking_at_yaw([0.0, 0.0, 1.0], 0.0, 1.0, 16, 8, 0).unwrap();
        let v = &render_gt_views(&scene, &[cam.clone()]).unwrap()[0];
        let step = march_step(scene.spec());
        for row in 0..8 {
            for col in 0..16 {
                let px = row * 16 + col;
                assert!(v.depth.mask[px]);
                assert_eq!(v.image.row(px), &[1.0, 0.0, 0.0]);
                let (_, cos_z) = cam.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
                let analytic = 2.0 / cos_z;
                let t = v.depth.depth[px];
                assert!(
                    t >= analytic - 1e-12 && t <= analytic + step,
                    "{t} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn perturbation_keeps_a_valid_rotation() {
        let cam = camera_ring(1, 0.5, 90.0, 32, 16).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = perturb_extrinsics(&cam, 2.0, &mut rng).unwrap();
        assert_ne!(p.cam_to_ego, cam.cam_to_ego);
        assert_eq!(p.center(), cam.center());
        assert_eq!(perturb_extrinsics(&cam, 0.0, &mut rng).unwrap(), cam);
    }
}
