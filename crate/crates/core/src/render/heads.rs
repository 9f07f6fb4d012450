use rand::Rng;

use super::FrustumFeatures;
use crate::nn::{sigmoid, Activation, DenseArray, Mlp, MlpCache};
use crate::{Error, Result};

/// Density and color decoders. Both are raw MLPs; ReLU and Sigmoid are applied
/// on top of their outputs by [`density_color_heads`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderHeads {
    pub density: Mlp,
    pub color: Mlp,
}

impl RenderHeads {
    /// Single linear density layer and a `layers`-deep ReLU color MLP.
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (dims, acts) = color_arch(channels, hidden, layers)?;
        Ok(Self {
            density: Mlp::init(&[channels, 1], &[Activation::Identity], rng)?,
            color: Mlp::init(&dims, &acts, rng)?,
        })
    }

    pub fn zeros(channels: usize, hidden: usize, layers: usize) -> Result<Self> {
        let (dims, acts) = color_arch(channels, hidden, layers)?;
        Ok(Self {
            density: Mlp::zeros(&[channels, 1], &[Activation::Identity])?,
            color: Mlp::zeros(&dims, &acts)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            density: self.density.zeros_like(),
            color: self.color.zeros_like(),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &RenderHeads) {
        self.density.add_scaled(alpha, &other.density);
        self.color.add_scaled(alpha, &other.color);
    }
}

fn color_arch(
    channels: usize,
    hidden: usize,
    layers: usize,
) -> Result<(Vec<usize>, Vec<Activation>)> {
    if layers == 0 {
        return Err(Error::config("color head needs at least one layer"));
    }
    let mut dims = vec![channels];
    dims.extend(std::iter::repeat(hidden).take(layers - 1));
    dims.push(3);
    let mut acts = vec![Activation::Relu; layers - 1];
    acts.push(Activation::Identity);
    Ok((dims, acts))
}

/// Per-sample density and color with the forward caches needed for backward.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[n_points]`, nonnegative.
    pub sigma: Vec<f64>,
    /// `[n_points, 3]`, in `[0, 1]`.
    pub color: Vec<f64>,
    row_of: Vec<u32>,
    zero_row: Option<u32>,
    density_cache: MlpCache,
    color_cache: MlpCache,
}

impl HeadOutput {
    /// Smallest distance of any ReLU input, including the density output, from zero.
    pub fn relu_margin(&self, d_sigma: &Mlp, d_c: &Mlp) -> f64 {
        let out = self.density_cache.output().data().iter().map(|v| v.abs());
        out.fold(f64::INFINITY, f64::min)
            .min(d_sigma.relu_margin(&self.density_cache))
            .min(d_c.relu_margin(&self.color_cache))
    }
}

/// Applies `sigma = relu(D_sigma(f))` and `c = sigmoid(D_c(f))` to every sample.
///
/// Samples flagged zero in the frustum share one evaluated row.
pub fn density_color_heads(
    feats: &FrustumFeatures,
    d_sigma: &Mlp,
    d_c: &Mlp,
) -> Result<HeadOutput> {
    let c = feats.channels;
    if d_sigma.input_dim() != c || d_c.input_dim() != c {
        return Err(Error::config(format!(
            "render heads take {} and {} input channels, frustum features have {c}",
            d_sigma.input_dim(),
            d_c.input_dim()
        )));
    }
    if d_sigma.output_dim() != 1 || d_c.output_dim() != 3 {
        return Err(Error::config(format!(
            "density head must emit 1 value and color head 3, got {} and {}",
            d_sigma.output_dim(),
            d_c.output_dim()
        )));
    }
    let n = feats.n_points();
    let mut compact = Vec::new();
    let mut row_of = Vec::with_capacity(n);
    let mut zero_row = None;
    let mut rows = 0u32;
    for s in 0..n {
        let x = feats.sample(s);
        let shared = feats.zero[s] && x.iter().all(|&v| v == 0.0);
        if shared {
            let r = *zero_row.get_or_insert_with(|| {
                compact.extend(std::iter::repeat(0.0).take(c));
                rows += 1;
                rows - 1
            });
            row_of.push(r);
        } else {
            compact.extend_from_slice(x);
            row_of.push(rows);
            rows += 1;
        }
    }
    let x = DenseArray::new(vec![rows as usize, c], compact)?;
    let density_cache = d_sigma.forward_cached(&x)?;
    let color_cache = d_c.forward_cached(&x)?;
    let mut sigma = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n * 3);
    let (ds, dc) = (density_cache.output().data(), color_cache.output().data());
    for &r in &row_of {
        let r = r as usize;
        sigma.push(ds[r].max(0.0));
        color.extend(dc[r * 3..r * 3 + 3].iter().map(|&v| sigmoid(v)));
    }
    Ok(HeadOutput {
        sigma,
        color,
        row_of,
        zero_row,
        density_cache,
        color_cache,
    })
}

/// Backward through both heads. Parameter gradients accumulate into `grads`;
/// returns sample gradients `[n_points, C]`. Samples sharing the zero row get no
/// input gradient, since no grid feature reaches them.
pub fn density_color_heads_backward(
    d_sigma: &Mlp,
    d_c: &Mlp,
    out: &HeadOutput,
    grad_sigma: &[f64],
    grad_color: &[f64],
    grads: &mut RenderHeads,
) -> Result<Vec<f64>> {
    let n = out.sigma.len();
    if grad_sigma.len() != n || grad_color.len() != 3 * n {
        return Err(Error::dim(
            format!("{n} density and {} color gradients", 3 * n),
            format!("{} and {}", grad_sigma.len(), grad_color.len()),
        ));
    }
    let rows = out.density_cache.output().rows();
    let mut gs = vec![0.0; rows];
    let mut gc = vec![0.0; rows * 3];
    let ds = out.density_cache.output().data();
    for (s, &r) in out.row_of.iter().enumerate() {
        let r = r as usize;
        if ds[r] > 0.0 {
            gs[r] += grad_sigma[s];
        }
        for ch in 0..3 {
            let y = out.color[s * 3 + ch];
            gc[r * 3 + ch] += grad_color[s * 3 + ch] * y * (1.0 - y);
        }
    }
    let gs = DenseArray::new(vec![rows, 1], gs)?;
    let gc = DenseArray::new(vec![rows, 3], gc)?;
    let gx_s = d_sigma.backward_into(&out.density_cache, &gs, &mut grads.density)?;
    let gx_c = d_c.backward_into(&out.color_cache, &gc, &mut grads.color)?;
    let c = gx_s.last_dim();
    let mut grad = vec![0.0; n * c];
    for (s, &r) in out.row_of.iter().enumerate() {
        if Some(r) == out.zero_row {
            continue;
        }
        let r = r as usize;
        let dst = &mut grad[s * c..(s + 1) * c];
        for ((d, &a), &b) in dst.iter_mut().zip(gx_s.row(r)).zip(gx_c.row(r)) {
            *d = a + b;
        }
    }
    Ok(grad)
}
