//! Multi-layer perceptron with explicit forward/backward.

use rand::Rng;

use super::{Activation, DenseArray, LinearLayer};
use crate::{Error, Result};

/// A stack of linear layers, each followed by its own activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LinearLayer>,
    activations: Vec<Activation>,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub(crate) inputs: Vec<DenseArray>,
    pub(crate) pre: Vec<DenseArray>,
    pub(crate) output: DenseArray,
}

impl MlpCache {
    pub fn output(&self) -> &DenseArray {
        &self.output
    }

    pub fn into_output(self) -> DenseArray {
        self.output
    }
}

impl Mlp {
    pub fn new(layers: Vec<LinearLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("mlp needs at least one layer"));
        }
        if layers.len() != activations.len() {
            return Err(Error::config(format!(
                "{} layers but {} activations",
                layers.len(),
                activations.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    /// Randomly initialized network with widths `dims[0] -> dims[1] -> ...`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("mlp needs an input and an output width"));
        }
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::init(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, activations.to_vec())
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("mlp needs an input and an output width"));
        }
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::zeros(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, activations.to_vec())
    }

    /// Same architecture with all parameters zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LinearLayer::zeros_like).collect(),
            activations: self.activations.clone(),
        }
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(&h)?;
            act.forward_in_place(&mut h);
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &DenseArray) -> Result<MlpCache> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let z = layer.forward(&h)?;
            let mut a = z.clone();
            act.forward_in_place(&mut a);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(MlpCache {
            inputs,
            pre,
            output: h,
        })
    }

    /// Backpropagates `grad_out`, adding parameter gradients into `grads`
    /// (which must come from [`Mlp::zeros_like`]) and returning the input gradient.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        grad_out: &DenseArray,
        grads: &mut Mlp,
    ) -> Result<DenseArray> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::config("gradient buffer does not match network"));
        }
        let n = self.layers.len();
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            let out = if i + 1 < n {
                &cache.inputs[i + 1]
            } else {
                &cache.output
            };
            g = self.activations[i].backward(&cache.pre[i], out, &g)?;
            let (gw, gb) = self.layers[i].param_grads(&cache.inputs[i], &g)?;
            grads.layers[i].accumulate(&gw, &gb);
            g = self.layers[i].input_grad(&g)?;
        }
        Ok(g)
    }

    /// Smallest `|pre-activation|` over ReLU layers for the cached batch.
    pub fn relu_margin(&self, cache: &MlpCache) -> f64 {
        self.activations
            .iter()
            .zip(&cache.pre)
            .filter(|(a, _)| **a == Activation::Relu)
            .flat_map(|(_, z)| z.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Convenience wrapper returning fresh parameter gradients.
    pub fn backward(&self, cache: &MlpCache, grad_out: &DenseArray) -> Result<(DenseArray, Mlp)> {
        let mut grads = self.zeros_like();
        let gx = self.backward_into(cache, grad_out, &mut grads)?;
        Ok((gx, grads))
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(alpha, b);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight().len() + l.bias().len())
            .sum()
    }

    /// Flat views of every parameter tensor, `(suffix, values)`, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{i}.weight"), l.weight()));
            out.push((format!("{i}.bias"), l.bias()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            let (w, b) = l.params_mut();
            out.push((format!("{i}.weight"), w));
            out.push((format!("{i}.bias"), b));
        }
        out
    }

    /// Shapes matching [`Mlp::tensors`].
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(vec![l.out_dim(), l.in_dim()]);
            out.push(vec![l.out_dim()]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_identity_layer_passes_input() {
        let l = LinearLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2]).unwrap();
        let m = Mlp::new(vec![l], vec![Activation::Identity]).unwrap();
        let x = DenseArray::new(vec![1, 2], vec![0.25, -3.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_init_sigmoid_and_relu() {
        let x = DenseArray::new(vec![3, 4], (0..12).map(|i| i as f64 - 5.0).collect()).unwrap();
        let m = Mlp::zeros(&[4, 8, 3], &[Activation::Relu, Activation::Sigmoid]).unwrap();
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.5));
        let m = Mlp::zeros(&[4, 8, 3], &[Activation::Relu, Activation::Relu]).unwrap();
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn broken_chain_rejected_at_construction() {
        let a = LinearLayer::zeros(4, 3).unwrap();
        let b = LinearLayer::zeros(2, 1).unwrap();
        let err = Mlp::new(vec![a, b], vec![Activation::Relu, Activation::Identity]);
        assert!(matches!(err, Err(Error::Config(_))));
        let a = LinearLayer::zeros(4, 3).unwrap();
        assert!(Mlp::new(vec![a], vec![]).is_err());
    }
}
