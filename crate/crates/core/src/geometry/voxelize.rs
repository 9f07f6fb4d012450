//! Point-cloud voxelization into a learnable sparse feature grid.
//!
//! Every occupied cell is summarized by four pooled statistics (mean point offset
//! from the cell center in voxel units, then mean intensity) and pushed through a
//! per-voxel encoder.

use std::collections::BTreeMap;

use super::{GridSpec, PointCloud, SparseFeatureGrid};
use crate::nn::{DenseArray, Mlp, MlpCache};
use crate::{Error, Result};

pub const POOLED_STAT_DIM: usize = 4;

/// Per-cell pooled statistics of a cloud.
#[derive(Debug, Clone)]
pub struct PooledCells {
    pub spec: GridSpec,
    /// Flat indices of occupied cells, ascending.
    pub cells: Vec<usize>,
    /// `[cells.len(), 4]`.
    pub stats: DenseArray,
    pub binned: usize,
    pub dropped: usize,
}

pub fn pool_points(cloud: &PointCloud, spec: &GridSpec) -> PooledCells {
    let mut acc: BTreeMap<usize, ([f64; 4], usize)> = BTreeMap::new();
    let mut dropped = 0;
    for (p, &i) in cloud.points.iter().zip(&cloud.intensity) {
        let Some(idx) = spec.locate(*p) else {
            dropped += 1;
            continue;
        };
        let c = spec.center(idx);
        let e = acc.entry(spec.flat(idx)).or_insert(([0.0; 4], 0));
        for a in 0..3 {
            e.0[a] += (p[a] - c[a]) / spec.voxel_size;
        }
        e.0[3] += i;
        e.1 += 1;
    }
    let mut cells = Vec::with_capacity(acc.len());
    let mut stats = Vec::with_capacity(acc.len() * POOLED_STAT_DIM);
    for (cell, (sum, n)) in acc {
        cells.push(cell);
        stats.extend(sum.iter().map(|s| s / n as f64));
    }
    let m = cells.len();
    PooledCells {
        spec: *spec,
        cells,
        stats: DenseArray::new(vec![m, POOLED_STAT_DIM], stats).expect("pooled shape"),
        binned: cloud.len() - dropped,
        dropped,
    }
}

/// Voxelized cloud plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Voxelized {
    pub grid: SparseFeatureGrid,
    pub pooled: PooledCells,
    pub cache: MlpCache,
}

pub fn voxelize(cloud: &PointCloud, spec: &GridSpec, encoder: &Mlp) -> Result<SparseFeatureGrid> {
    Ok(voxelize_cached(pool_points(cloud, spec), encoder)?.grid)
}

pub fn voxelize_cached(pooled: PooledCells, encoder: &Mlp) -> Result<Voxelized> {
    if encoder.input_dim() != POOLED_STAT_DIM {
        return Err(Error::config(format!(
            "lidar encoder must take {POOLED_STAT_DIM} inputs, takes {}",
            encoder.input_dim()
        )));
    }
    let mut grid = SparseFeatureGrid::empty(pooled.spec, encoder.output_dim())?;
    let cache = encoder.forward_cached(&pooled.stats)?;
    for (r, &cell) in pooled.cells.iter().enumerate() {
        grid.set(cell, cache.output().row(r))?;
    }
    Ok(Voxelized {
        grid,
        pooled,
        cache,
    })
}

/// Backpropagates a full-grid feature gradient into the encoder parameters.
pub fn voxelize_backward(
    vox: &Voxelized,
    encoder: &Mlp,
    grad_grid: &[f64],
    encoder_grads: &mut Mlp,
) -> Result<()> {
    let c = vox.grid.channels();
    if grad_grid.len() != vox.grid.features().len() {
        return Err(Error::dim(
            format!("{} grid gradient values", vox.grid.features().len()),
            format!("{}", grad_grid.len()),
        ));
    }
    let mut g = Vec::with_capacity(vox.pooled.cells.len() * c);
    for &cell in &vox.pooled.cells {
        g.extend_from_slice(&grad_grid[cell * c..(cell + 1) * c]);
    }
    let g = DenseArray::new(vec![vox.pooled.cells.len(), c], g)?;
    encoder.backward_into(&vox.cache, &g, encoder_grads)?;
    Ok(())
}
