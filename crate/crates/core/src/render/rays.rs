use crate::geometry::CameraModel;
use crate::{Error, Result};

/// One ray per low-resolution pixel with shared uniform sample depths.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub h: usize,
    pub w: usize,
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    /// Camera-frame z component of each unit direction.
    pub cam_z: Vec<f64>,
    pub t_values: Vec<f64>,
    pub delta: f64,
}

impl RayBundle {
    pub fn n_rays(&self) -> usize {
        self.h * self.w
    }

    pub fn n_samples(&self) -> usize {
        self.t_values.len()
    }

    #[inline]
    pub fn point(&self, ray: usize, i: usize) -> [f64; 3] {
        let o = self.origins[ray];
        let d = self.directions[ray];
        let t = self.t_values[i];
        [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]
    }
}

/// Rays through the centers of the `1/downsample` pixels, sampled at the midpoints
/// of `n_s` equal segments of `[near, far]`.
pub fn generate_rays(
    cam: &CameraModel,
    downsample: usize,
    near: f64,
    far: f64,
    n_s: usize,
) -> Result<RayBundle> {
    if !(near.is_finite() && far.is_finite() && near < far) {
        return Err(Error::config(format!(
            "render bounds need near < far, got [{near}, {far}]"
        )));
    }
    if n_s == 0 {
        return Err(Error::config("n_s must be at least 1"));
    }
    cam.validate()?;
    let low = cam.downsampled(downsample)?;
    let (h, w) = (low.image_h, low.image_w);
    let delta = (far - near) / n_s as f64;
    let t_values = (0..n_s).map(|i| near + (i as f64 + 0.5) * delta).collect();
    let origin = low.center();
    let mut origins = Vec::with_capacity(h * w);
    let mut directions = Vec::with_capacity(h * w);
    let mut cam_z = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (d, z) = low.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
            origins.push(origin);
            directions.push(d);
            cam_z.push(z);
        }
    }
    Ok(RayBundle {
        h,
        w,
        origins,
        directions,
        cam_z,
        t_values,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::looking_at_yaw([0.0, 0.0, 1.0], 0.0, 90f64.to_radians(), 64, 32, 0).unwrap()
    }

    #[test]
    fn midpoint_samples() {
        let r = generate_rays(&cam(), 16, 1.0, 5.0, 4).unwrap();
        assert_eq!((r.h, r.w), (2, 4));
        assert_eq!(r.t_values, vec![1.5, 2.5, 3.5, 4.5]);
        assert_eq!(r.delta, 1.0);
        for d in &r.directions {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_center_pixel_follows_axis() {
        let c = CameraModel::looking_at_yaw([0.0; 3], 0.5, 1.2, 48, 48, 0).unwrap();
        let r = generate_rays(&c, 16, 0.5, 4.0, 8).unwrap();
        let d = r.directions[r.w + 1];
        assert!((d[0] - 0.5f64.cos()).abs() < 1e-12);
        assert!((d[1] - 0.5f64.sin()).abs() < 1e-12);
        assert!(d[2].abs() < 1e-12);
    }

    #[test]
    fn bad_bounds() {
        assert!(matches!(
            generate_rays(&cam(), 16, 2.0, 1.0, 4),
            Err(Error::Config(_))
        ));
        assert!(generate_rays(&cam(), 16, 1.0, 2.0, 0).is_err());
        assert!(generate_rays(&cam(), 64, 1.0, 2.0, 4).is_err());
    }
}
