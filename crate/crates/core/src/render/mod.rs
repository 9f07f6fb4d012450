//! Differentiable volume rendering of a fused feature grid into color and depth.

mod composite;
mod heads;
pub mod image_io;
mod rays;
mod sample;
mod upsample;

pub use composite::{
    composite_backward, composite_color, composite_depth, opacity, ray_weights, CompositeGrads,
    DepthMode,
};
pub use heads::{density_color_heads, density_color_heads_backward, HeadOutput, RenderHeads};
pub use rays::{generate_rays, RayBundle};
pub use sample::{
    sample_features, sample_features_backward, trilinear_taps, FrustumFeatures, Taps,
};
pub use upsample::{upsample_bilinear, upsample_bilinear_backward};

use crate::geometry::SparseFeatureGrid;
use crate::nn::DenseArray;
use crate::{Error, Result};

pub const DEFAULT_DOWNSAMPLE: usize = 16;
pub const DEFAULT_N_SAMPLES: usize = 112;

/// Low-resolution renders and their upsampled copies.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedViews {
    /// `[h, w, 3]`
    pub color: DenseArray,
    /// `[h, w]`
    pub depth: DenseArray,
    /// `[h, w]`
    pub opacity: DenseArray,
    /// `[h', w', 3]`
    pub color_up: DenseArray,
    /// `[h', w']`
    pub depth_up: DenseArray,
}

/// Forward state of one rendered view.
#[derive(Debug, Clone)]
pub struct RenderPass {
    pub views: RenderedViews,
    pub frustum: FrustumFeatures,
    pub heads: HeadOutput,
    pub mode: DepthMode,
}

/// Samples, decodes, composites and upsamples one camera's rays.
pub fn render_view(
    grid: &SparseFeatureGrid,
    rays: &RayBundle,
    heads: &RenderHeads,
    mode: DepthMode,
    out_h: usize,
    out_w: usize,
) -> Result<RenderPass> {
    let frustum = sample_features(grid, rays)?;
    let ho = density_color_heads(&frustum, &heads.density, &heads.color)?;
    let n_s = rays.n_samples();
    let (h, w) = (rays.h, rays.w);
    let color = DenseArray::new(
        vec![h, w, 3],
        composite_color(&ho.sigma, &ho.color, n_s, rays.delta)?,
    )?;
    let depth = DenseArray::new(
        vec![h, w],
        composite_depth(&ho.sigma, n_s, rays.delta, &rays.t_values, mode)?,
    )?;
    let opac = DenseArray::new(vec![h, w], opacity(&ho.sigma, n_s, rays.delta)?)?;
    let color_up = upsample_bilinear(&color, out_h, out_w)?;
    let depth_up = upsample_bilinear(&depth, out_h, out_w)?;
    Ok(RenderPass {
        views: RenderedViews {
            color,
            depth,
            opacity: opac,
            color_up,
            depth_up,
        },
        frustum,
        heads: ho,
        mode,
    })
}

/// Backward of [`render_view`] from gradients on the upsampled maps. Head
/// gradients accumulate into `head_grads`, grid gradients into `grad_grid`.
#[allow(clippy::too_many_arguments)]
pub fn render_view_backward(
    grid: &SparseFeatureGrid,
    rays: &RayBundle,
    heads: &RenderHeads,
    pass: &RenderPass,
    grad_color_up: Option<&DenseArray>,
    grad_depth_up: Option<&DenseArray>,
    head_grads: &mut RenderHeads,
    grad_grid: &mut [f64],
) -> Result<()> {
    if grad_color_up.is_none() && grad_depth_up.is_none() {
        return Ok(());
    }
    let gc = grad_color_up
        .map(|g| upsample_bilinear_backward(pass.views.color.shape(), g))
        .transpose()?;
    let gd = grad_depth_up
        .map(|g| upsample_bilinear_backward(pass.views.depth.shape(), g))
        .transpose()?;
    let n_s = rays.n_samples();
    let (g_sigma, g_color) = composite_backward(
        &pass.heads.sigma,
        &pass.heads.color,
        n_s,
        rays.delta,
        &rays.t_values,
        CompositeGrads {
            color: gc.as_ref().map(|g| g.data()),
            depth: gd.as_ref().map(|g| (g.data(), pass.mode)),
            opacity: None,
        },
    )?;
    let g_samples = density_color_heads_backward(
        &heads.density,
        &heads.color,
        &pass.heads,
        &g_sigma,
        &g_color,
        head_grads,
    )?;
    sample_features_backward(grid, &pass.frustum, &g_samples, grad_grid)
}

impl RenderedViews {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str, i: usize, v: f64| Error::Numerical {
            index: i,
            message: format!("{what} value {v} out of range"),
        };
        for (i, &v) in self.color.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad("color", i, v));
            }
        }
        for (i, &v) in self.opacity.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad("opacity", i, v));
            }
        }
        for (i, &v) in self.depth.data().iter().enumerate() {
            if !(v >= 0.0) {
                return Err(bad("depth", i, v));
            }
        }
        Ok(())
    }
}
