//! Neighbor feature gathering and the learnable KNN gate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CoordList, NeighborTable};
use crate::geometry::SparseFeatureGrid;
use crate::nn::{axpy, Activation, DenseArray, LinearLayer};
use crate::{Error, Result};

/// Whether the gate emits one weight per LiDAR voxel or one per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    #[default]
    Scalar,
    Channel,
}

/// `omega = activation(Linear(concat(neighbor features)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateNet {
    pub linear: LinearLayer,
    pub activation: Activation,
    pub k: usize,
    pub channels: usize,
}

impl GateNet {
    pub fn new<R: Rng + ?Sized>(
        k: usize,
        channels: usize,
        mode: GateMode,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let out = match mode {
            GateMode::Scalar => 1,
            GateMode::Channel => channels,
        };
        Ok(Self {
            linear: LinearLayer::init(k * channels, out, rng)?,
            activation,
            k,
            channels,
        })
    }

    pub fn zeros(
        k: usize,
        channels: usize,
        mode: GateMode,
        activation: Activation,
    ) -> Result<Self> {
        let out = match mode {
            GateMode::Scalar => 1,
            GateMode::Channel => channels,
        };
        Ok(Self {
            linear: LinearLayer::zeros(k * channels, out)?,
            activation,
            k,
            channels,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.linear.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim()
    }
}

/// Per query, the found neighbors' features concatenated in distance order,
/// zero-padded to `k * C`.
pub fn gather_neighbor_features(
    table: &NeighborTable,
    targets: &CoordList,
    camera_grid: &SparseFeatureGrid,
) -> Result<DenseArray> {
    let c = camera_grid.channels();
    let spec = camera_grid.spec();
    let k = table.k;
    let mut out = DenseArray::zeros(vec![table.queries(), k * c]);
    for q in 0..table.queries() {
        for (slot, (t, _)) in table.neighbors(q).enumerate() {
            let flat = target_flat(targets, t, spec)?;
            out.row_mut(q)[slot * c..(slot + 1) * c].copy_from_slice(camera_grid.feature(flat));
        }
    }
    Ok(out)
}

fn target_flat(targets: &CoordList, t: usize, spec: &crate::geometry::GridSpec) -> Result<usize> {
    let e = *targets.entries.get(t).ok_or_else(|| {
        Error::config(format!(
            "neighbor index {t} outside target list of {}",
            targets.len()
        ))
    })?;
    let f = targets.flat.get(t).copied().unwrap_or(usize::MAX);
    if f != usize::MAX {
        return Ok(f);
    }
    if e.iter()
        .zip(&spec.dims)
        .any(|(&v, &d)| v < 0 || v as usize >= d)
    {
        return Err(Error::config(format!(
            "target {e:?} outside grid {:?}",
            spec.dims
        )));
    }
    Ok(spec.flat([e[0] as usize, e[1] as usize, e[2] as usize]))
}

/// Scatters gathered-row gradients back onto the camera grid gradient.
pub fn gather_backward(
    table: &NeighborTable,
    targets: &CoordList,
    camera_grid: &SparseFeatureGrid,
    grad_rows: &DenseArray,
    grad_camera: &mut [f64],
) -> Result<()> {
    let c = camera_grid.channels();
    grad_rows.expect_shape(&[table.queries(), table.k * c])?;
    for q in 0..table.queries() {
        for (slot, (t, _)) in table.neighbors(q).enumerate() {
            let flat = target_flat(targets, t, camera_grid.spec())?;
            axpy(
                1.0,
                &grad_rows.row(q)[slot * c..(slot + 1) * c],
                &mut grad_camera[flat * c..(flat + 1) * c],
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GateOutput {
    pub pre: DenseArray,
    pub omega: DenseArray,
}

pub fn knn_gate(gathered: &DenseArray, gate: &GateNet) -> Result<GateOutput> {
    if gathered.last_dim() != gate.in_dim() {
        return Err(Error::config(format!(
            "gate expects rows of width {} (k={} x C={}), got {}",
            gate.in_dim(),
            gate.k,
            gate.channels,
            gathered.last_dim()
        )));
    }
    let pre = gate.linear.forward(gathered)?;
    let omega = gate.activation.forward(&pre);
    Ok(GateOutput { pre, omega })
}

/// Returns the gradient w.r.t. the gathered rows and accumulates gate parameter
/// gradients into `grads`.
pub fn knn_gate_backward(
    gate: &GateNet,
    gathered: &DenseArray,
    out: &GateOutput,
    grad_omega: &DenseArray,
    grads: &mut LinearLayer,
) -> Result<DenseArray> {
    let g = gate.activation.backward(&out.pre, &out.omega, grad_omega)?;
    let lg = gate.linear.backward(gathered, &g)?;
    grads.accumulate(&lg.grad_weight, &lg.grad_bias);
    Ok(lg.grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{knn_search, CoordSource};
    use crate::geometry::GridSpec;

    #[test]
    fn gather_concatenates_in_distance_order_and_pads() {
        let spec = GridSpec::new([0.0; 3], 1.0, [1, 1, 4]).unwrap();
        let mut cam = SparseFeatureGrid::empty(spec, 2).unwrap();
        cam.set(1, &[1.0, 2.0]).unwrap();
        cam.set(3, &[3.0, 4.0]).unwrap();
        let targets = crate::fusion::extract_nonempty(&cam, CoordSource::Camera);
        let queries = CoordList::new(vec![[0, 0, 0], [0, 0, 0]], CoordSource::Lidar);
        let far = CoordList::new(vec![[0, 0, 0]], CoordSource::Lidar);
        let tab = knn_search(&queries, &targets, 2, 3.0).unwrap();
        let rows = gather_neighbor_features(&tab, &targets, &cam).unwrap();
        assert_eq!(rows.row(0), &[1.0, 2.0, 3.0, 4.0]);
        let tab = knn_search(&far, &targets, 2, 0.5).unwrap();
        let rows = gather_neighbor_features(&tab, &targets, &cam).unwrap();
        assert_eq!(rows.row(0), &[0.0; 4]);
    }

    #[test]
    fn zero_gate_sigmoid_is_half() {
        let gate = GateNet::zeros(2, 2, GateMode::Scalar, Activation::Sigmoid).unwrap();
        let rows =
            DenseArray::new(vec![2, 4], vec![1.0, -2.0, 3.0, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = knn_gate(&rows, &gate).unwrap();
        assert_eq!(out.omega.data(), &[0.5, 0.5]);
    }

    #[test]
    fn hand_gate_identity() {
        let mut gate = GateNet::zeros(2, 2, GateMode::Scalar, Activation::Identity).unwrap();
        gate.linear = LinearLayer::from_parts(4, 1, vec![1.0, 0.0, 0.0, 0.0], vec![0.0]).unwrap();
        let rows = DenseArray::new(vec![1, 4], vec![2.0, 9.0, 9.0, 9.0]).unwrap();
        assert_eq!(knn_gate(&rows, &gate).unwrap().omega.data(), &[2.0]);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let gate = GateNet::zeros(2, 2, GateMode::Scalar, Activation::Sigmoid).unwrap();
        let rows = DenseArray::zeros(vec![1, 3]);
        assert!(matches!(knn_gate(&rows, &gate), Err(Error::Config(_))));
    }
}
