//! Elementwise activations and row-wise softmax.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DenseArray;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
    /// Normalizes along the last extent.
    Softmax,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "identity" => Ok(Self::Identity),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::config(format!("unknown activation tag `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Identity => "identity",
            Self::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Activation {
    pub fn forward(self, x: &DenseArray) -> DenseArray {
        let mut y = x.clone();
        self.forward_in_place(&mut y);
        y
    }

    pub fn forward_in_place(self, x: &mut DenseArray) {
        match self {
            Self::Identity => {}
            Self::Relu => x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Self::Sigmoid => x.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Self::Softmax => {
                let w = x.last_dim();
                let mut tmp = vec![0.0; w];
                for r in 0..x.rows() {
                    let row = x.row_mut(r);
                    softmax_row(row, &mut tmp);
                    row.copy_from_slice(&tmp);
                }
            }
        }
    }

    /// Gradient w.r.t. the activation input.
    ///
    /// `input` is the pre-activation, `output` the value returned by `forward`.
    /// The relu subgradient at exactly 0 is 0.
    pub fn backward(
        self,
        input: &DenseArray,
        output: &DenseArray,
        grad_out: &DenseArray,
    ) -> Result<DenseArray> {
        grad_out.expect_shape(output.shape())?;
        input.expect_shape(output.shape())?;
        let mut g = grad_out.clone();
        match self {
            Self::Identity => {}
            Self::Relu => {
                for (gi, &xi) in g.data_mut().iter_mut().zip(input.data()) {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            Self::Sigmoid => {
                for (gi, &yi) in g.data_mut().iter_mut().zip(output.data()) {
                    *gi *= yi * (1.0 - yi);
                }
            }
            Self::Softmax => {
                let w = output.last_dim();
                for r in 0..output.rows() {
                    let y = output.row(r);
                    let go = grad_out.row(r);
                    let s: f64 = y.iter().zip(go).map(|(a, b)| a * b).sum();
                    let gr = &mut g.data_mut()[r * w..(r + 1) * w];
                    for j in 0..w {
                        gr[j] = y[j] * (go[j] - s);
                    }
                }
            }
        }
        Ok(g)
    }
}
