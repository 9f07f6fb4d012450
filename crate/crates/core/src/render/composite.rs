use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// What the depth map accumulates along each ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// `sum T_i alpha_i`, the accumulated opacity.
    PaperLiteral,
    /// `sum T_i alpha_i t_i`, the expected termination distance.
    #[default]
    ExpectedDepth,
}

impl FromStr for DepthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" | "literal" => Ok(DepthMode::PaperLiteral),
            "expected_depth" | "expected" => Ok(DepthMode::ExpectedDepth),
            other => Err(Error::config(format!(
                "unknown depth mode `{other}` (expected paper_literal or expected_depth)"
            ))),
        }
    }
}

impl std::fmt::Display for DepthMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DepthMode::PaperLiteral => "paper_literal",
            DepthMode::ExpectedDepth => "expected_depth",
        })
    }
}

/// Compositing weights `w_i = T_i alpha_i` of one ray, plus `T_{n+1}`.
pub fn ray_weights(sigma: &[f64], delta: f64, weights: &mut [f64]) -> f64 {
    let mut t = 1.0;
    let mut acc = 0.0;
    for (w, &s) in weights.iter_mut().zip(sigma) {
        acc += s * delta;
        let next = (-acc).exp();
        *w = t - next;
        t = next;
    }
    t
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    if let Some(i) = sigma.iter().position(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::Numerical {
            index: i,
            message: format!("density {} is not a finite nonnegative value", sigma[i]),
        });
    }
    Ok(())
}

fn check_n(sigma: &[f64], n_s: usize) -> Result<usize> {
    if n_s == 0 || sigma.len() % n_s != 0 {
        return Err(Error::dim(
            format!("a multiple of n_s = {n_s} densities"),
            sigma.len().to_string(),
        ));
    }
    Ok(sigma.len() / n_s)
}

/// Color per ray, `[n_rays, 3]`. `sigma` is `[n_rays, n_s]`, `color` `[n_rays, n_s, 3]`.
pub fn composite_color(sigma: &[f64], color: &[f64], n_s: usize, delta: f64) -> Result<Vec<f64>> {
    let rays = check_n(sigma, n_s)?;
    if color.len() != sigma.len() * 3 {
        return Err(Error::dim(
            format!("{} color values", sigma.len() * 3),
            color.len().to_string(),
        ));
    }
    check_sigma(sigma)?;
    let mut out = vec![0.0; rays * 3];
    let mut w = vec![0.0; n_s];
    for r in 0..rays {
        ray_weights(&sigma[r * n_s..(r + 1) * n_s], delta, &mut w);
        for (i, &wi) in w.iter().enumerate() {
            for ch in 0..3 {
                out[r * 3 + ch] += wi * color[(r * n_s + i) * 3 + ch];
            }
        }
    }
    Ok(out)
}

/// Depth per ray according to `mode`.
pub fn composite_depth(
    sigma: &[f64],
    n_s: usize,
    delta: f64,
    t_values: &[f64],
    mode: DepthMode,
) -> Result<Vec<f64>> {
    let rays = check_n(sigma, n_s)?;
    if t_values.len() != n_s {
        return Err(Error::dim(
            format!("{n_s} sample depths"),
            t_values.len().to_string(),
        ));
    }
    check_sigma(sigma)?;
    let mut w = vec![0.0; n_s];
    Ok((0..rays)
        .map(|r| {
            ray_weights(&sigma[r * n_s..(r + 1) * n_s], delta, &mut w);
            match mode {
                DepthMode::PaperLiteral => w.iter().sum(),
                DepthMode::ExpectedDepth => w.iter().zip(t_values).map(|(a, b)| a * b).sum(),
            }
        })
        .collect())
}

/// Accumulated opacity `1 - T_{n+1}` per ray.
pub fn opacity(sigma: &[f64], n_s: usize, delta: f64) -> Result<Vec<f64>> {
    let rays = check_n(sigma, n_s)?;
    check_sigma(sigma)?;
    Ok((0..rays)
        .map(|r| {
            let s: f64 = sigma[r * n_s..(r + 1) * n_s].iter().sum();
            1.0 - (-s * delta).exp()
        })
        .collect())
}

/// Upstream gradients of one composited pass. Any of them may be absent.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompositeGrads<'a> {
    pub color: Option<&'a [f64]>,
    pub depth: Option<(&'a [f64], DepthMode)>,
    pub opacity: Option<&'a [f64]>,
}

/// Gradients of color, depth and opacity maps w.r.t. `sigma` and `color`.
///
/// With per-sample scalar `g_i` collecting everything the output multiplies `w_i`
/// by, `d/d sigma_k = delta (T_{k+1} g_k - sum_{i>k} w_i g_i)`.
pub fn composite_backward(
    sigma: &[f64],
    color: &[f64],
    n_s: usize,
    delta: f64,
    t_values: &[f64],
    up: CompositeGrads<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rays = check_n(sigma, n_s)?;
    if color.len() != sigma.len() * 3 || t_values.len() != n_s {
        return Err(Error::dim(
            format!("{} color values and {n_s} depths", sigma.len() * 3),
            format!("{} and {}", color.len(), t_values.len()),
        ));
    }
    for (g, len) in [
        (up.color, rays * 3),
        (up.depth.map(|d| d.0), rays),
        (up.opacity, rays),
    ] {
        if let Some(g) = g {
            if g.len() != len {
                return Err(Error::dim(
                    format!("{len} upstream gradients"),
                    g.len().to_string(),
                ));
            }
        }
    }
    let mut g_sigma = vec![0.0; sigma.len()];
    let mut g_color = vec![0.0; color.len()];
    let mut w = vec![0.0; n_s];
    let mut g = vec![0.0; n_s];
    for r in 0..rays {
        let s = &sigma[r * n_s..(r + 1) * n_s];
        ray_weights(s, delta, &mut w);
        g.iter_mut().for_each(|v| *v = 0.0);
        if let Some(gc) = up.color {
            let gc = &gc[r * 3..r * 3 + 3];
            for i in 0..n_s {
                let base = (r * n_s + i) * 3;
                for ch in 0..3 {
                    g[i] += gc[ch] * color[base + ch];
                    g_color[base + ch] = w[i] * gc[ch];
                }
            }
        }
        if let Some((gd, mode)) = up.depth {
            for i in 0..n_s {
                g[i] += gd[r]
                    * match mode {
                        DepthMode::PaperLiteral => 1.0,
                        DepthMode::ExpectedDepth => t_values[i],
                    };
            }
        }
        if let Some(go) = up.opacity {
            for v in g.iter_mut() {
                *v += go[r];
            }
        }
        let mut acc = 0.0;
        let mut suffix = 0.0;
        let mut prefix = Vec::with_capacity(n_s);
        for &si in s {
            acc += si * delta;
            prefix.push((-acc).exp());
        }
        for k in (0..n_s).rev() {
            g_sigma[r * n_s + k] = delta * (prefix[k] * g[k] - suffix);
            suffix += w[k] * g[k];
        }
    }
    Ok((g_sigma, g_color))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transparent_and_opaque() {
        let c = vec![0.2, 0.4, 0.6, 0.9, 0.9, 0.9];
        assert_eq!(
            composite_color(&[0.0, 0.0], &c, 2, 1.0).unwrap(),
            vec![0.0; 3]
        );
        let out = composite_color(&[1e6, 0.0], &c, 2, 1.0).unwrap();
        for (a, b) in out.iter().zip(&c[..3]) {
            assert!((a - b).abs() < 1e-6);
        }
        let d =
            composite_depth(&[1e6, 0.0], 2, 1.0, &[0.5, 1.5], DepthMode::ExpectedDepth).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-6);
        assert_eq!(
            composite_depth(&[0.0, 0.0], 2, 1.0, &[0.5, 1.5], DepthMode::PaperLiteral).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn two_sample_formula() {
        let c = vec![0.3, 0.0, 1.0, 0.8, 0.5, 0.0];
        let out = composite_color(&[1.0, 1.0], &c, 2, 1.0).unwrap();
        let e = (-1f64).exp();
        for ch in 0..3 {
            let want = (1.0 - e) * c[ch] + e * (1.0 - e) * c[3 + ch];
            assert!((out[ch] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_density_rejected() {
        assert!(matches!(
            composite_color(&[0.5, -0.1], &[0.0; 6], 2, 1.0),
            Err(Error::Numerical { index: 1, .. })
        ));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "literal".parse::<DepthMode>().unwrap(),
            DepthMode::PaperLiteral
        );
        assert_eq!(
            "expected_depth".parse::<DepthMode>().unwrap(),
            DepthMode::ExpectedDepth
        );
        assert!(matches!(
            "median".parse::<DepthMode>(),
            Err(Error::Config(_))
        ));
        assert_eq!(DepthMode::default(), DepthMode::ExpectedDepth);
    }

    #[test]
    fn opacity_matches_weight_sum() {
        let s = [0.3, 1.2, 0.0, 2.0];
        let o = opacity(&s, 4, 0.5).unwrap()[0];
        let d = composite_depth(&s, 4, 0.5, &[1.0; 4], DepthMode::PaperLiteral).unwrap()[0];
        assert!((o - d).abs() < 1e-15);
    }
}
