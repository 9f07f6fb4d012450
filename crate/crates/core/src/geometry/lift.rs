//! 2D-to-3D view transform: per-pixel features are spread along the pixel ray
//! according to a categorical depth distribution and splatted into voxels.
//!
//! Pixel `(row, col)` at depth bin `b` lands at the unprojection of its pixel
//! center at camera depth `bin_center(b)`, and contributes `p_b * feature` to the
//! containing voxel (nearest-cell splat). A voxel is non-empty once its
//! accumulated probability exceeds the weight threshold.

use serde::{Deserialize, Serialize};

use super::{CameraModel, GridSpec, SparseFeatureGrid};
use crate::nn::{axpy, dot, DenseArray};
use crate::{Error, Result};

pub const DEFAULT_LIFT_THRESHOLD: f64 = 1e-3;

/// Uniform metric depth bins over `[near, far)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBins {
    pub n_bins: usize,
    pub near: f64,
    pub far: f64,
}

impl DepthBins {
    pub fn new(n_bins: usize, near: f64, far: f64) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::config("need at least one depth bin"));
        }
        if !(near < far && near >= 0.0 && far.is_finite()) {
            return Err(Error::config(format!(
                "depth range must satisfy 0 <= near < far, got [{near}, {far}]"
            )));
        }
        Ok(Self { n_bins, near, far })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        (self.far - self.near) / self.n_bins as f64
    }

    #[inline]
    pub fn center(&self, b: usize) -> f64 {
        self.near + (b as f64 + 0.5) * self.width()
    }

    /// Bin containing `depth`, half-open; `None` outside `[near, far)`.
    pub fn bin_of(&self, depth: f64) -> Option<usize> {
        if !(depth >= self.near && depth < self.far) {
            return None;
        }
        let b = ((depth - self.near) / self.width()).floor() as usize;
        Some(b.min(self.n_bins - 1))
    }
}

/// Per-pixel categorical distribution over depth bins at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    pub h: usize,
    pub w: usize,
    pub bins: DepthBins,
    probs: Vec<f64>,
}

impl DepthDistribution {
    pub fn new(h: usize, w: usize, bins: DepthBins, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != h * w * bins.n_bins {
            return Err(Error::dim(
                format!("{}x{}x{} probabilities", h, w, bins.n_bins),
                format!("{}", probs.len()),
            ));
        }
        for (px, row) in probs.chunks(bins.n_bins).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Numerical {
                    index: px,
                    message: format!("depth probabilities sum to {s}"),
                });
            }
        }
        Ok(Self { h, w, bins, probs })
    }

    pub fn uniform(h: usize, w: usize, bins: DepthBins) -> Self {
        let p = 1.0 / bins.n_bins as f64;
        Self {
            h,
            w,
            bins,
            probs: vec![p; h * w * bins.n_bins],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn pixel(&self, px: usize) -> &[f64] {
        &self.probs[px * self.bins.n_bins..(px + 1) * self.bins.n_bins]
    }
}

/// Voxel targets of every `(pixel, bin)` splat for one camera; geometry only.
#[derive(Debug, Clone)]
pub struct LiftPlan {
    pub h: usize,
    pub w: usize,
    pub bins: DepthBins,
    spec: GridSpec,
    targets: Vec<u32>,
}

const OUTSIDE: u32 = u32::MAX;

impl LiftPlan {
    /// `cam` must be the camera at feature resolution.
    pub fn new(cam: &CameraModel, spec: &GridSpec, bins: DepthBins) -> Self {
        let (h, w) = (cam.image_h, cam.image_w);
        let mut targets = Vec::with_capacity(h * w * bins.n_bins);
        for row in 0..h {
            for col in 0..w {
                for b in 0..bins.n_bins {
                    let p = cam.unproject(col as f64 + 0.5, row as f64 + 0.5, bins.center(b));
                    targets.push(spec.locate(p).map_or(OUTSIDE, |i| spec.flat(i) as u32));
                }
            }
        }
        Self {
            h,
            w,
            bins,
            spec: *spec,
            targets,
        }
    }

    #[inline]
    pub fn target(&self, px: usize, bin: usize) -> Option<usize> {
        let t = self.targets[px * self.bins.n_bins + bin];
        (t != OUTSIDE).then_some(t as usize)
    }
}

/// One camera's inputs to the lift.
#[derive(Debug, Clone, Copy)]
pub struct LiftView<'a> {
    /// `[h, w, C]` per-pixel features.
    pub feats: &'a DenseArray,
    pub depth: &'a DepthDistribution,
    pub plan: &'a LiftPlan,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LiftStats {
    pub splats_in: usize,
    pub splats_out: usize,
}

#[derive(Debug, Clone)]
pub struct Lifted {
    pub grid: SparseFeatureGrid,
    /// Accumulated splat probability per voxel.
    pub weights: Vec<f64>,
    pub stats: LiftStats,
}

fn check_view(v: &LiftView<'_>, spec: &GridSpec) -> Result<usize> {
    let shape = v.feats.shape();
    if shape.len() != 3 || shape[0] != v.plan.h || shape[1] != v.plan.w {
        return Err(Error::dim(
            format!("[{}, {}, C] pixel features", v.plan.h, v.plan.w),
            format!("{shape:?}"),
        ));
    }
    if v.depth.h != v.plan.h || v.depth.w != v.plan.w || v.depth.bins != v.plan.bins {
        return Err(Error::dim(
            format!("{}x{} depth with {:?}", v.plan.h, v.plan.w, v.plan.bins),
            format!("{}x{} depth with {:?}", v.depth.h, v.depth.w, v.depth.bins),
        ));
    }
    if v.plan.spec != *spec {
        return Err(Error::config("lift plan built for a different grid"));
    }
    Ok(shape[2])
}

/// Accumulates every view into one grid.
pub fn lift_views(
    views: &[LiftView<'_>],
    spec: &GridSpec,
    channels: usize,
    threshold: f64,
) -> Result<Lifted> {
    let mut grid = SparseFeatureGrid::empty(*spec, channels)?;
    let mut weights = vec![0.0; spec.n_cells()];
    let mut stats = LiftStats::default();
    for v in views {
        let c = check_view(v, spec)?;
        if c != channels {
            return Err(Error::dim(format!("{channels} channels"), format!("{c}")));
        }
        let n_bins = v.plan.bins.n_bins;
        let feats = grid.features_mut();
        for px in 0..v.plan.h * v.plan.w {
            let f = v.feats.row(px);
            let probs = v.depth.pixel(px);
            for b in 0..n_bins {
                match v.plan.target(px, b) {
                    Some(t) => {
                        stats.splats_in += 1;
                        let p = probs[b];
                        weights[t] += p;
                        if p != 0.0 {
                            axpy(p, f, &mut feats[t * channels..(t + 1) * channels]);
                        }
                    }
                    None => stats.splats_out += 1,
                }
            }
        }
    }
    for (i, &w) in weights.iter().enumerate() {
        if w > threshold {
            grid.mark(i);
        }
    }
    grid.enforce_mask();
    Ok(Lifted {
        grid,
        weights,
        stats,
    })
}

/// Single-view lift with the default threshold.
pub fn lift_image_features(
    pixel_feats: &DenseArray,
    depth: &DepthDistribution,
    cam: &CameraModel,
    spec: &GridSpec,
) -> Result<Lifted> {
    let plan = LiftPlan::new(cam, spec, depth.bins);
    let view = LiftView {
        feats: pixel_feats,
        depth,
        plan: &plan,
    };
    lift_views(
        &[view],
        spec,
        pixel_feats.last_dim(),
        DEFAULT_LIFT_THRESHOLD,
    )
}

/// Gradients of a lift w.r.t. each view's pixel features and depth probabilities.
pub fn lift_backward(
    views: &[LiftView<'_>],
    lifted: &Lifted,
    grad_grid: &[f64],
) -> Result<Vec<(DenseArray, Vec<f64>)>> {
    let spec = *lifted.grid.spec();
    let channels = lifted.grid.channels();
    if grad_grid.len() != lifted.grid.features().len() {
        return Err(Error::dim(
            format!("{} gradient values", lifted.grid.features().len()),
            format!("{}", grad_grid.len()),
        ));
    }
    let mask = lifted.grid.mask();
    let mut out = Vec::with_capacity(views.len());
    for v in views {
        check_view(v, &spec)?;
        let n_bins = v.plan.bins.n_bins;
        let mut gf = DenseArray::zeros(v.feats.shape().to_vec());
        let mut gp = vec![0.0; v.depth.probs().len()];
        for px in 0..v.plan.h * v.plan.w {
            let f = v.feats.row(px);
            let probs = v.depth.pixel(px);
            for b in 0..n_bins {
                let Some(t) = v.plan.target(px, b) else {
                    continue;
                };
                if !mask[t] {
                    continue;
                }
                let g = &grad_grid[t * channels..(t + 1) * channels];
                gp[px * n_bins + b] = dot(f, g);
                axpy(probs[b], g, gf.row_mut(px));
            }
        }
        out.push((gf, gp));
    }
    Ok(out)
}
