//! Projection of ego-frame points into camera images and LiDAR depth maps.

use super::{CameraModel, PointCloud, Projection};
use crate::{Error, Result};

pub fn project_to_image(points: &[[f64; 3]], cam: &CameraModel) -> Vec<Projection> {
    points.iter().map(|&p| cam.project(p)).collect()
}

/// Sparse per-pixel depth in meters; `0` where `mask` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub h: usize,
    pub w: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMap {
    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            depth: vec![0.0; h * w],
            mask: vec![false; h * w],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Converts camera-z depth into distance along each pixel's ray.
    ///
    /// `cam` must describe the same resolution as the map.
    pub fn to_ray_distance(&self, cam: &CameraModel) -> Result<DepthMap> {
        if cam.image_w != self.w || cam.image_h != self.h {
            return Err(Error::dim(
                format!("{}x{} camera", self.w, self.h),
                format!("{}x{}", cam.image_w, cam.image_h),
            ));
        }
        let mut out = self.clone();
        for row in 0..self.h {
            for col in 0..self.w {
                let i = row * self.w + col;
                if self.mask[i] {
                    let (_, cos_z) = cam.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
                    out.depth[i] = self.depth[i] / cos_z;
                }
            }
        }
        Ok(out)
    }
}

/// Z-buffered LiDAR depth (camera-frame z) rendered at `w x h`.
pub fn lidar_depth_map(
    cloud: &PointCloud,
    cam: &CameraModel,
    h: usize,
    w: usize,
) -> Result<DepthMap> {
    if h == 0 || w == 0 {
        return Err(Error::config(format!(
            "depth map size {w}x{h} must be positive"
        )));
    }
    let cam = cam.resized(w, h)?;
    let mut map = DepthMap::empty(h, w);
    for &p in &cloud.points {
        let pr = cam.project(p);
        if !pr.valid {
            continue;
        }
        let i = (pr.v.floor() as usize).min(h - 1) * w + (pr.u.floor() as usize).min(w - 1);
        if !map.mask[i] || pr.depth < map.depth[i] {
            map.depth[i] = pr.depth;
            map.mask[i] = true;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::looking_at_yaw([0.0; 3], 0.0, 1.5, 40, 20, 0).unwrap()
    }

    #[test]
    fn empty_cloud_gives_invalid_map() {
        let m = lidar_depth_map(&PointCloud::default(), &cam(), 20, 40).unwrap();
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let cloud = PointCloud::new(vec![[5.0, 0.0, 0.0], [3.0, 0.0, 0.0]], None).unwrap();
        let m = lidar_depth_map(&cloud, &cam(), 20, 40).unwrap();
        assert_eq!(m.valid_count(), 1);
        let i = m.mask.iter().position(|&v| v).unwrap();
        assert_eq!(m.depth[i], 3.0);
    }

    #[test]
    fn single_point_matches_projection() {
        let p = [6.0, 1.0, -0.5];
        let cloud = PointCloud::new(vec![p], None).unwrap();
        let c = cam();
        let m = lidar_depth_map(&cloud, &c, 20, 40).unwrap();
        let pr = project_to_image(&[p], &c)[0];
        let i = pr.v.floor() as usize * 40 + pr.u.floor() as usize;
        assert!(m.mask[i]);
        assert_eq!(m.depth[i], pr.depth);
    }

    #[test]
    fn ray_distance_exceeds_z_off_axis() {
        let c = cam();
        let mut m = DepthMap::empty(20, 40);
        m.mask[0] = true;
        m.depth[0] = 2.0;
        let r = m.to_ray_distance(&c).unwrap();
        assert!(r.depth[0] > 2.0);
    }
}
