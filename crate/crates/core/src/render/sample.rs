use super::RayBundle;
use crate::geometry::{GridSpec, SparseFeatureGrid};
use crate::{Error, Result};

/// Trilinear taps of one sample point: flat voxel indices and weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps {
    pub index: [u32; 8],
    pub weight: [f64; 8],
}

/// Grid features interpolated at every ray sample, `[n_rays * n_s, C]` row-major.
#[derive(Debug, Clone)]
pub struct FrustumFeatures {
    pub h: usize,
    pub w: usize,
    pub n_s: usize,
    pub channels: usize,
    pub samples: Vec<f64>,
    /// `None` for samples outside the span of voxel centers.
    pub taps: Vec<Option<Taps>>,
    /// True where the sampled feature is identically zero.
    pub zero: Vec<bool>,
}

impl FrustumFeatures {
    pub fn n_points(&self) -> usize {
        self.h * self.w * self.n_s
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.samples[s * self.channels..(s + 1) * self.channels]
    }
}

/// Per axis: lower index and fraction, or `None` outside `[first center, last center]`.
#[inline]
fn axis_tap(u: f64, dim: usize) -> Option<(usize, f64)> {
    let x = u - 0.5;
    let last = (dim - 1) as f64;
    if !(0.0..=last).contains(&x) {
        return None;
    }
    if dim == 1 {
        return Some((0, 0.0));
    }
    let i = (x.floor() as usize).min(dim - 2);
    Some((i, x - i as f64))
}

/// Trilinear taps at an ego-frame point.
pub fn trilinear_taps(spec: &GridSpec, p: [f64; 3]) -> Option<Taps> {
    let c = spec.continuous(p);
    let [dd, hh, ww] = spec.dims;
    let (d0, fd) = axis_tap(c[0], dd)?;
    let (h0, fh) = axis_tap(c[1], hh)?;
    let (w0, fw) = axis_tap(c[2], ww)?;
    let step = |i: usize, dim: usize| if dim == 1 { i } else { i + 1 };
    let (d1, h1, w1) = (step(d0, dd), step(h0, hh), step(w0, ww));
    let mut index = [0u32; 8];
    let mut weight = [0.0; 8];
    let mut n = 0;
    for (d, wd) in [(d0, 1.0 - fd), (d1, fd)] {
        for (h, wh) in [(h0, 1.0 - fh), (h1, fh)] {
            for (w, www) in [(w0, 1.0 - fw), (w1, fw)] {
                index[n] = ((d * hh + h) * ww + w) as u32;
                weight[n] = wd * wh * www;
                n += 1;
            }
        }
    }
    Some(Taps { index, weight })
}

/// Interpolates the grid at every sample point of every ray.
pub fn sample_features(grid: &SparseFeatureGrid, rays: &RayBundle) -> Result<FrustumFeatures> {
    let c = grid.channels();
    let n_s = rays.n_samples();
    let n = rays.n_rays() * n_s;
    let mut samples = vec![0.0; n * c];
    let mut taps = Vec::with_capacity(n);
    let mut zero = vec![true; n];
    let spec = grid.spec();
    for ray in 0..rays.n_rays() {
        for i in 0..n_s {
            let s = ray * n_s + i;
            let t = trilinear_taps(spec, rays.point(ray, i));
            if let Some(tp) = &t {
                let out = &mut samples[s * c..(s + 1) * c];
                for (&v, &wt) in tp.index.iter().zip(&tp.weight) {
                    if wt == 0.0 || !grid.is_set(v as usize) {
                        continue;
                    }
                    zero[s] = false;
                    for (o, &f) in out.iter_mut().zip(grid.feature(v as usize)) {
                        *o += wt * f;
                    }
                }
            }
            taps.push(t);
        }
    }
    Ok(FrustumFeatures {
        h: rays.h,
        w: rays.w,
        n_s,
        channels: c,
        samples,
        taps,
        zero,
    })
}

/// Scatters sample gradients `[n_points, C]` back onto the features of set voxels;
/// unset voxels read as zero in the forward pass and receive nothing.
pub fn sample_features_backward(
    grid: &SparseFeatureGrid,
    frustum: &FrustumFeatures,
    grad_samples: &[f64],
    grad_grid: &mut [f64],
) -> Result<()> {
    let c = frustum.channels;
    if grad_samples.len() != frustum.n_points() * c {
        return Err(Error::dim(
            format!("{} sample gradients", frustum.n_points() * c),
            grad_samples.len().to_string(),
        ));
    }
    if grad_grid.len() != grid.features().len() {
        return Err(Error::dim(
            format!("{} grid gradients", grid.features().len()),
            grad_grid.len().to_string(),
        ));
    }
    for (s, t) in frustum.taps.iter().enumerate() {
        let Some(tp) = t else { continue };
        if frustum.zero[s] {
            continue;
        }
        let g = &grad_samples[s * c..(s + 1) * c];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        for (&v, &wt) in tp.index.iter().zip(&tp.weight) {
            if wt == 0.0 || !grid.is_set(v as usize) {
                continue;
            }
            let dst = &mut grad_grid[v as usize * c..(v as usize + 1) * c];
            for (d, &x) in dst.iter_mut().zip(g) {
                *d += wt * x;
            }
        }
    }
    Ok(())
}
