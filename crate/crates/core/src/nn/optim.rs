//! AdamW with decoupled weight decay.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(1e-4, 0.01)
    }
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `params`, paired positionally with `grads`.
    ///
    /// Moment buffers are created lazily on the first call and must keep the same
    /// layout afterwards. Gradients are validated before any parameter is touched.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut [f64])>,
        grads: Vec<(String, &[f64])>,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                format!("{} gradient tensors", params.len()),
                format!("{}", grads.len()),
            ));
        }
        for ((pname, p), (gname, g)) in params.iter().zip(&grads) {
            if p.len() != g.len() || pname != gname {
                return Err(Error::dim(
                    format!("`{pname}` with {} values", p.len()),
                    format!("`{gname}` with {} values", g.len()),
                ));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training {
                    param: pname.clone(),
                    message: format!("non-finite gradient {} at index {i}", g[i]),
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(&params)
                .any(|(m, (_, p))| m.len() != p.len())
        {
            return Err(Error::config(
                "parameter layout changed between optimizer steps",
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for (k, ((_, p), (_, g))) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] *= decay;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_protocol() {
        let o = AdamW::default();
        assert_eq!(o.learning_rate, 1e-4);
        assert_eq!(o.weight_decay, 0.01);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut o = AdamW::new(0.1, 0.0);
        let mut p = vec![1.5, -2.0, 0.0];
        let g = vec![0.0; 3];
        for _ in 0..3 {
            o.step(vec![("p".into(), &mut p[..])], vec![("p".into(), &g[..])])
                .unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.0]);
        assert_eq!(o.step_count(), 3);
    }

    #[test]
    fn single_scalar_step_by_hand() {
        // m = 0.05, v = 2.5e-4, m_hat = 0.5, v_hat = 0.25
        // p = 1 * (1 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8)
        let mut o = AdamW::new(0.1, 0.01);
        let mut p = vec![1.0];
        o.step(
            vec![("w".into(), &mut p[..])],
            vec![("w".into(), &[0.5][..])],
        )
        .unwrap();
        let expected = 0.999 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {}", p[0], expected);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut o = AdamW::default();
        let mut p = vec![1.0, 2.0];
        let err = o
            .step(
                vec![("head.0.bias".into(), &mut p[..])],
                vec![("head.0.bias".into(), &[0.0, f64::INFINITY][..])],
            )
            .unwrap_err();
        match err {
            Error::Training { param, .. } => assert_eq!(param, "head.0.bias"),
            e => panic!("{e}"),
        }
        assert_eq!(p, vec![1.0, 2.0]);
    }
}
