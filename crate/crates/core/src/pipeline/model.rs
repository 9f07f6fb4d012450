//! Learnable parameters of one branch and their checkpoint layout.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::dataset::PIXEL_INPUT_DIM;
use crate::fusion::GateNet;
use crate::geometry::voxelize::POOLED_STAT_DIM;
use crate::losses::Branch;
use crate::nn::{Activation, Checkpoint, Mlp};
use crate::render::RenderHeads;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// Pooled LiDAR statistics to `C` features.
    pub lidar_encoder: Option<Mlp>,
    /// Per-pixel 2D features.
    pub image_encoder: Option<Mlp>,
    /// Per-pixel depth-bin logits.
    pub depth_net: Option<Mlp>,
    pub gate: Option<GateNet>,
    pub occ_head: Mlp,
    pub render: RenderHeads,
}

/// Width of the volume the occupancy and render heads read.
pub fn fused_channels(cfg: &RunConfig) -> usize {
    let c = cfg.channels;
    match cfg.branch {
        Branch::LidarCamera if cfg.use_gsfusion => 3 * c,
        Branch::LidarCamera => 2 * c,
        Branch::LidarOnly | Branch::CameraOnly => c,
    }
}

impl Model {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = cfg.channels;
        let m = &cfg.model;
        let relu_id = [Activation::Relu, Activation::Identity];
        let lidar_encoder = if cfg.branch.uses_lidar() {
            Some(Mlp::init(&[POOLED_STAT_DIM, c, c], &relu_id, &mut rng)?)
        } else {
            None
        };
        let (image_encoder, depth_net) = if cfg.branch.uses_camera() {
            (
                Some(Mlp::init(
                    &[PIXEL_INPUT_DIM, m.image_hidden, c],
                    &relu_id,
                    &mut rng,
                )?),
                Some(Mlp::init(
                    &[PIXEL_INPUT_DIM, m.depth_hidden, cfg.depth_bins],
                    &[Activation::Relu, Activation::Softmax],
                    &mut rng,
                )?),
            )
        } else {
            (None, None)
        };
        let gate = if cfg.branch == Branch::LidarCamera && cfg.use_gsfusion {
            Some(GateNet::new(
                cfg.k,
                c,
                cfg.gate_mode,
                Activation::Sigmoid,
                &mut rng,
            )?)
        } else {
            None
        };
        let f = fused_channels(cfg);
        let occ_head = Mlp::init(&[f, m.occ_hidden, cfg.n_classes], &relu_id, &mut rng)?;
        let render = RenderHeads::init(f, m.color_hidden, m.color_layers, &mut rng)?;
        Ok(Self {
            lidar_encoder,
            image_encoder,
            depth_net,
            gate,
            occ_head,
            render,
        })
    }

    /// Same architecture, all parameters zero; the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            lidar_encoder: self.lidar_encoder.as_ref().map(Mlp::zeros_like),
            image_encoder: self.image_encoder.as_ref().map(Mlp::zeros_like),
            depth_net: self.depth_net.as_ref().map(Mlp::zeros_like),
            gate: self.gate.as_ref().map(|g| GateNet {
                linear: g.linear.zeros_like(),
                ..g.clone()
            }),
            occ_head: self.occ_head.zeros_like(),
            render: self.render.zeros_like(),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Model) {
        fn pair(a: &mut Option<Mlp>, b: &Option<Mlp>, alpha: f64) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.add_scaled(alpha, b);
            }
        }
        pair(&mut self.lidar_encoder, &other.lidar_encoder, alpha);
        pair(&mut self.image_encoder, &other.image_encoder, alpha);
        pair(&mut self.depth_net, &other.depth_net, alpha);
        if let (Some(a), Some(b)) = (self.gate.as_mut(), other.gate.as_ref()) {
            a.linear.add_scaled(alpha, &b.linear);
        }
        self.occ_head.add_scaled(alpha, &other.occ_head);
        self.render.add_scaled(alpha, &other.render);
    }

    fn mlps(&self) -> Vec<(&'static str, &Mlp)> {
        let mut out = Vec::new();
        for (name, m) in [
            ("lidar_encoder", &self.lidar_encoder),
            ("image_encoder", &self.image_encoder),
            ("depth_net", &self.depth_net),
        ] {
            if let Some(m) = m {
                out.push((name, m));
            }
        }
        out.push(("occ_head", &self.occ_head));
        out.push(("render.density", &self.render.density));
        out.push(("render.color", &self.render.color));
        out
    }

    /// Every tensor as `(name, shape, values)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (prefix, m) in self.mlps() {
            for ((name, data), shape) in m.tensors().into_iter().zip(m.tensor_shapes()) {
                out.push((format!("{prefix}.{name}"), shape, data));
            }
        }
        if let Some(g) = &self.gate {
            let l = &g.linear;
            out.push((
                "gate.weight".into(),
                vec![l.out_dim(), l.in_dim()],
                l.weight(),
            ));
            out.push(("gate.bias".into(), vec![l.out_dim()], l.bias()));
        }
        out
    }

    /// Mutable views in the order of [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (prefix, m) in [
            ("lidar_encoder", self.lidar_encoder.as_mut()),
            ("image_encoder", self.image_encoder.as_mut()),
            ("depth_net", self.depth_net.as_mut()),
            ("occ_head", Some(&mut self.occ_head)),
            ("render.density", Some(&mut self.render.density)),
            ("render.color", Some(&mut self.render.color)),
        ] {
            if let Some(m) = m {
                for (name, data) in m.tensors_mut() {
                    out.push((format!("{prefix}.{name}"), data));
                }
            }
        }
        if let Some(g) = self.gate.as_mut() {
            let (w, b) = g.linear.params_mut();
            out.push(("gate.weight".into(), w));
            out.push(("gate.bias".into(), b));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.2.iter().any(|v| !v.is_finite()))
            .map(|t| t.0)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (name, shape, data) in self.tensors() {
            ck.push(name, shape, data);
        }
        ck
    }

    /// Model for `cfg` with parameters taken from `ck`. Checkpoints are stored in
    /// f32, so loaded values are the f32 roundings of the saved ones.
    pub fn from_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::init(cfg)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != ck.tensors.len() {
            return Err(Error::Version(format!(
                "checkpoint holds {} tensors, config expects {}",
                ck.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&ck.tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::Version(format!(
                    "checkpoint tensor `{}` {:?} does not match `{name}` {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        for ((_, dst), t) in model.tensors_mut().into_iter().zip(&ck.tensors) {
            for (d, &s) in dst.iter_mut().zip(&t.data) {
                *d = s as f64;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(cfg: &RunConfig, path: &Path) -> Result<Self> {
        Self::from_checkpoint(cfg, &Checkpoint::load(path)?)
    }

    /// Parameters rounded through f32, as a checkpoint round trip leaves them.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_decides_which_parts_exist() {
        let mut cfg = RunConfig::default();
        let m = Model::init(&cfg).unwrap();
        assert!(m.lidar_encoder.is_some() && m.image_encoder.is_some() && m.gate.is_some());
        assert_eq!(m.occ_head.input_dim(), 48);
        cfg.use_gsfusion = false;
        let m = Model::init(&cfg).unwrap();
        assert!(m.gate.is_none());
        assert_eq!(m.occ_head.input_dim(), 32);
        cfg.branch = Branch::LidarOnly;
        let m = Model::init(&cfg).unwrap();
        assert!(m.image_encoder.is_none() && m.depth_net.is_none());
        assert_eq!(m.render.density.input_dim(), 16);
    }

    #[test]
    fn names_are_unique_and_mut_order_matches() {
        let mut m = Model::init(&RunConfig::default()).unwrap();
        let names: Vec<String> = m.tensors().into_iter().map(|t| t.0).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let mut_names: Vec<String> = m.tensors_mut().into_iter().map(|t| t.0).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = RunConfig::default();
        let mut m = Model::init(&cfg).unwrap();
        m.round_to_f32();
        let back = Model::from_checkpoint(
            &cfg,
            &Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
        let mut other = cfg.clone();
        other.channels = 8;
        assert!(matches!(
            Model::from_checkpoint(&other, &m.to_checkpoint()),
            Err(Error::Version(_))
        ));
    }
}
