//! Pinhole camera with an ego-frame pose.
//!
//! Camera frame: x right, y down, z forward. Pixel `(col, row)` covers
//! `[col, col + 1) x [row, row + 1)` in continuous image coordinates, so its
//! center sits at `(col + 0.5, row + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: usize,
    pub image_h: usize,
    /// Rigid transform taking camera-frame points to the ego frame (meters).
    pub cam_to_ego: Mat4,
    pub view_id: u32,
}

/// Result of projecting one ego-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_w: usize,
        image_h: usize,
        cam_to_ego: Mat4,
        view_id: u32,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            image_w,
            image_h,
            cam_to_ego,
            view_id,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// A level camera at `position` looking along ego yaw angle `yaw` (radians,
    /// counter-clockwise from +x), with horizontal field of view `hfov`.
    pub fn looking_at_yaw(
        position: [f64; 3],
        yaw: f64,
        hfov: f64,
        image_w: usize,
        image_h: usize,
        view_id: u32,
    ) -> Result<Self> {
        if !(hfov > 0.0 && hfov < std::f64::consts::PI) {
            return Err(Error::config(format!(
                "field of view {hfov} rad out of range"
            )));
        }
        let f = image_w as f64 / 2.0 / (hfov / 2.0).tan();
        let (s, c) = yaw.sin_cos();
        // columns: camera x (right), y (down), z (forward) in ego coordinates
        let right = [s, -c, 0.0];
        let down = [0.0, 0.0, -1.0];
        let fwd = [c, s, 0.0];
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r][0] = right[r];
            m[r][1] = down[r];
            m[r][2] = fwd[r];
            m[r][3] = position[r];
        }
        m[3][3] = 1.0;
        Self::new(
            f,
            f,
            image_w as f64 / 2.0,
            image_h as f64 / 2.0,
            image_w,
            image_h,
            m,
            view_id,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::config("camera image size must be positive"));
        }
        if !(self.cx >= 0.0
            && self.cx < self.image_w as f64
            && self.cy >= 0.0
            && self.cy < self.image_h as f64)
        {
            return Err(Error::config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.image_w, self.image_h
            )));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::config("camera rotation is not orthonormal"));
                }
            }
        }
        let m = &self.cam_to_ego;
        if m[3] != [0.0, 0.0, 0.0, 1.0] || m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("cam_to_ego must be a finite rigid transform"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.cam_to_ego;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    /// Camera center in the ego frame.
    pub fn center(&self) -> [f64; 3] {
        [
            self.cam_to_ego[0][3],
            self.cam_to_ego[1][3],
            self.cam_to_ego[2][3],
        ]
    }

    pub fn cam_to_ego_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.cam_to_ego;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
        }
        out
    }

    pub fn cam_to_ego_dir(&self, d: [f64; 3]) -> [f64; 3] {
        let m = &self.cam_to_ego;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * d[0] + m[r][1] * d[1] + m[r][2] * d[2];
        }
        out
    }

    pub fn ego_to_cam_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.cam_to_ego;
        let q = [p[0] - m[0][3], p[1] - m[1][3], p[2] - m[2][3]];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = m[0][c] * q[0] + m[1][c] * q[1] + m[2][c] * q[2];
        }
        out
    }

    /// Pinhole projection; valid iff depth > 0 and `(u, v)` lies inside the image.
    pub fn project(&self, p_ego: [f64; 3]) -> Projection {
        let p = self.ego_to_cam_point(p_ego);
        let depth = p[2];
        if depth <= 0.0 {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth,
                valid: false,
            };
        }
        let u = self.fx * p[0] / depth + self.cx;
        let v = self.fy * p[1] / depth + self.cy;
        let valid = u >= 0.0 && u < self.image_w as f64 && v >= 0.0 && v < self.image_h as f64;
        Projection { u, v, depth, valid }
    }

    /// Ego point seen at image position `(u, v)` with camera-frame depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let x = (u - self.cx) / self.fx * depth;
        let y = (v - self.cy) / self.fy * depth;
        self.cam_to_ego_point([x, y, depth])
    }

    /// Unit ray direction (ego frame) through image position `(u, v)`, together with
    /// the camera-frame z component of that unit vector.
    pub fn ray_direction(&self, u: f64, v: f64) -> ([f64; 3], f64) {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let unit = [d[0] / n, d[1] / n, d[2] / n];
        (self.cam_to_ego_dir(unit), unit[2])
    }

    /// Same pose, intrinsics scaled to a `w x h` image.
    pub fn resized(&self, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::config(format!("cannot resize camera to {w}x{h}")));
        }
        let sx = w as f64 / self.image_w as f64;
        let sy = h as f64 / self.image_h as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            w,
            h,
            self.cam_to_ego,
            self.view_id,
        )
    }

    /// Camera for a `1/factor` image. Sizes are floored; intrinsics scale by
    /// exactly `1/factor`, so low-res pixel `j` maps to full-res `(j + 0.5) * factor`.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("downsample factor must be positive"));
        }
        let w = self.image_w / factor;
        let h = self.image_h / factor;
        if w == 0 || h == 0 {
            return Err(Error::config(format!(
                "downsample {factor} leaves no pixels of a {}x{} image",
                self.image_w, self.image_h
            )));
        }
        let s = factor as f64;
        Self::new(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            w,
            h,
            self.cam_to_ego,
            self.view_id,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_pose() -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    }

    #[test]
    fn axis_point_projects_to_principal_point() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 40.0, 100, 80, identity_pose(), 0).unwrap();
        let p = cam.project([0.0, 0.0, 7.0]);
        assert_eq!((p.u, p.v, p.depth, p.valid), (50.0, 40.0, 7.0, true));
    }

    #[test]
    fn behind_camera_is_invalid() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, identity_pose(), 0).unwrap();
        assert!(!cam.project([0.0, 0.0, -1.0]).valid);
    }

    #[test]
    fn pinhole_formula() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, identity_pose(), 0).unwrap();
        let p = cam.project([0.1, 0.0, 1.0]);
        assert!((p.u - 60.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_intrinsics() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4, identity_pose(), 0).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4, identity_pose(), 0).is_err());
        let mut bad = identity_pose();
        bad[0][0] = 2.0;
        assert!(CameraModel::new(1.0, 1.0, 1.0, 1.0, 4, 4, bad, 0).is_err());
    }

    #[test]
    fn yaw_camera_looks_forward() {
        let cam = CameraModel::looking_at_yaw(
            [1.0, 2.0, 3.0],
            std::f64::consts::FRAC_PI_2,
            1.5,
            64,
            32,
            1,
        )
        .unwrap();
        let p = cam.project([1.0, 7.0, 3.0]);
        assert!(p.valid);
        assert!((p.u - 32.0).abs() < 1e-9 && (p.v - 16.0).abs() < 1e-9);
        assert!((p.depth - 5.0).abs() < 1e-12);
    }
}
