//! Fully connected layer `y = x·Wᵀ + b`.

use rand::Rng;

use super::array::{axpy, dot};
use super::DenseArray;
use crate::{Error, Result};

/// Dense affine layer. Weights are row-major `[out_dim, in_dim]`.
///
/// The same type doubles as a gradient buffer (see [`LinearLayer::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradients produced by [`LinearLayer::backward`].
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub grad_x: DenseArray,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config(format!(
                "linear layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        })
    }

    /// Fan-in scaled uniform weights in `±1/sqrt(in_dim)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim)?;
        let limit = 1.0 / (in_dim as f64).sqrt();
        for w in &mut layer.weight {
            *w = rng.gen_range(-limit..limit);
        }
        Ok(layer)
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let layer = Self::zeros(in_dim, out_dim)?;
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::dim(
                format!("weight {}x{} and bias {}", out_dim, in_dim, out_dim),
                format!("weight len {} and bias len {}", weight.len(), bias.len()),
            ));
        }
        Ok(Self {
            weight,
            bias,
            ..layer
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weight, &mut self.bias)
    }

    fn check_input(&self, x: &DenseArray) -> Result<()> {
        if x.last_dim() != self.in_dim || x.shape().is_empty() {
            return Err(Error::dim(
                format!("[.., {}]", self.in_dim),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DenseArray) -> Result<DenseArray> {
        self.check_input(x)?;
        let rows = x.rows();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_dim;
        let mut out = vec![0.0; rows * self.out_dim];
        for r in 0..rows {
            let xr = x.row(r);
            let yr = &mut out[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, y) in yr.iter_mut().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                *y = dot(w, xr) + self.bias[o];
            }
        }
        DenseArray::new(shape, out)
    }

    /// Exact gradients of [`LinearLayer::forward`] for upstream `grad_out`.
    pub fn backward(&self, x: &DenseArray, grad_out: &DenseArray) -> Result<LinearGrads> {
        let (grad_weight, grad_bias) = self.param_grads(x, grad_out)?;
        let grad_x = self.input_grad(grad_out)?;
        Ok(LinearGrads {
            grad_x,
            grad_weight,
            grad_bias,
        })
    }

    /// Gradient w.r.t. the input only.
    pub fn input_grad(&self, grad_out: &DenseArray) -> Result<DenseArray> {
        if grad_out.last_dim() != self.out_dim || grad_out.shape().is_empty() {
            return Err(Error::dim(
                format!("[.., {}]", self.out_dim),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let rows = grad_out.rows();
        let mut shape = grad_out.shape().to_vec();
        *shape.last_mut().unwrap() = self.in_dim;
        let mut gx = vec![0.0; rows * self.in_dim];
        for r in 0..rows {
            let g = grad_out.row(r);
            let gxr = &mut gx[r * self.in_dim..(r + 1) * self.in_dim];
            for (o, &go) in g.iter().enumerate() {
                if go != 0.0 {
                    axpy(
                        go,
                        &self.weight[o * self.in_dim..(o + 1) * self.in_dim],
                        gxr,
                    );
                }
            }
        }
        DenseArray::new(shape, gx)
    }

    /// Gradients w.r.t. weight and bias, summed over rows.
    pub fn param_grads(
        &self,
        x: &DenseArray,
        grad_out: &DenseArray,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        if grad_out.rows() != x.rows() || grad_out.last_dim() != self.out_dim {
            return Err(Error::dim(
                format!("[{}, {}]", x.rows(), self.out_dim),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.out_dim];
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, &go) in grad_out.row(r).iter().enumerate() {
                if go != 0.0 {
                    gb[o] += go;
                    axpy(go, xr, &mut gw[o * self.in_dim..(o + 1) * self.in_dim]);
                }
            }
        }
        Ok((gw, gb))
    }

    /// Adds `grad_weight`/`grad_bias` into this buffer.
    pub fn accumulate(&mut self, grad_weight: &[f64], grad_bias: &[f64]) {
        axpy(1.0, grad_weight, &mut self.weight);
        axpy(1.0, grad_bias, &mut self.bias);
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &LinearLayer) {
        axpy(alpha, &other.weight, &mut self.weight);
        axpy(alpha, &other.bias, &mut self.bias);
    }
}
