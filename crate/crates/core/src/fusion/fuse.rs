//! Concatenation fusion of camera and LiDAR volumes.

use super::CoordList;
use crate::geometry::SparseFeatureGrid;
use crate::nn::{dot, DenseArray};
use crate::{Error, Result};

fn check_pair(f_i: &SparseFeatureGrid, f_l: &SparseFeatureGrid) -> Result<usize> {
    if f_i.spec() != f_l.spec() {
        return Err(Error::config(
            "camera and lidar grids use different grid specs",
        ));
    }
    if f_i.channels() != f_l.channels() {
        return Err(Error::config(format!(
            "camera grid has {} channels, lidar grid {}",
            f_i.channels(),
            f_l.channels()
        )));
    }
    Ok(f_i.channels())
}

/// Channel blocks `[F_I | F_L | F_L * omega]`; the third block is non-zero only at
/// LiDAR voxels. The fused mask is the union of both input masks.
pub fn gs_fuse(
    f_i: &SparseFeatureGrid,
    f_l: &SparseFeatureGrid,
    omega: &DenseArray,
    lidar: &CoordList,
) -> Result<SparseFeatureGrid> {
    let c = check_pair(f_i, f_l)?;
    let wdim = check_omega(omega, lidar, c)?;
    let n = f_i.spec().n_cells();
    let mut feats = vec![0.0; n * 3 * c];
    let mut mask = vec![false; n];
    for v in 0..n {
        mask[v] = f_i.is_set(v) || f_l.is_set(v);
        let row = &mut feats[v * 3 * c..(v + 1) * 3 * c];
        row[..c].copy_from_slice(f_i.feature(v));
        row[c..2 * c].copy_from_slice(f_l.feature(v));
    }
    for (q, &v) in lidar.flat.iter().enumerate() {
        let w = omega.row(q);
        let fl = f_l.feature(v);
        let third = &mut feats[v * 3 * c + 2 * c..(v + 1) * 3 * c];
        for ch in 0..c {
            third[ch] = fl[ch] * if wdim == 1 { w[0] } else { w[ch] };
        }
    }
    SparseFeatureGrid::from_parts(*f_i.spec(), 3 * c, feats, mask)
}

fn check_omega(omega: &DenseArray, lidar: &CoordList, c: usize) -> Result<usize> {
    let wdim = omega.last_dim();
    if omega.rows() != lidar.len() || (wdim != 1 && wdim != c) {
        return Err(Error::config(format!(
            "omega shaped {:?} does not match {} lidar voxels with {} channels",
            omega.shape(),
            lidar.len(),
            c
        )));
    }
    if lidar.flat.iter().any(|&f| f == usize::MAX) {
        return Err(Error::config("lidar coordinate list lacks flat indices"));
    }
    Ok(wdim)
}

#[derive(Debug, Clone)]
pub struct FuseGrads {
    pub grad_camera: Vec<f64>,
    pub grad_lidar: Vec<f64>,
    pub grad_omega: DenseArray,
}

pub fn gs_fuse_backward(
    f_l: &SparseFeatureGrid,
    omega: &DenseArray,
    lidar: &CoordList,
    grad_fused: &[f64],
) -> Result<FuseGrads> {
    let c = f_l.channels();
    let wdim = check_omega(omega, lidar, c)?;
    let n = f_l.spec().n_cells();
    if grad_fused.len() != n * 3 * c {
        return Err(Error::dim(
            format!("{} fused gradient values", n * 3 * c),
            format!("{}", grad_fused.len()),
        ));
    }
    let mut grad_camera = vec![0.0; n * c];
    let mut grad_lidar = vec![0.0; n * c];
    for v in 0..n {
        let g = &grad_fused[v * 3 * c..(v + 1) * 3 * c];
        grad_camera[v * c..(v + 1) * c].copy_from_slice(&g[..c]);
        grad_lidar[v * c..(v + 1) * c].copy_from_slice(&g[c..2 * c]);
    }
    let mut grad_omega = DenseArray::zeros(omega.shape().to_vec());
    for (q, &v) in lidar.flat.iter().enumerate() {
        let g3 = &grad_fused[v * 3 * c + 2 * c..(v + 1) * 3 * c];
        let fl = f_l.feature(v);
        let w = omega.row(q);
        let gl = &mut grad_lidar[v * c..(v + 1) * c];
        if wdim == 1 {
            for ch in 0..c {
                gl[ch] += w[0] * g3[ch];
            }
            grad_omega.row_mut(q)[0] = dot(fl, g3);
        } else {
            let go = grad_omega.row_mut(q);
            for ch in 0..c {
                gl[ch] += w[ch] * g3[ch];
                go[ch] = fl[ch] * g3[ch];
            }
        }
    }
    Ok(FuseGrads {
        grad_camera,
        grad_lidar,
        grad_omega,
    })
}

/// Plain `[F_I | F_L]` concatenation with the union mask.
pub fn fuse_baseline_concat(
    f_i: &SparseFeatureGrid,
    f_l: &SparseFeatureGrid,
) -> Result<SparseFeatureGrid> {
    let c = check_pair(f_i, f_l)?;
    let n = f_i.spec().n_cells();
    let mut feats = vec![0.0; n * 2 * c];
    let mut mask = vec![false; n];
    for v in 0..n {
        mask[v] = f_i.is_set(v) || f_l.is_set(v);
        feats[v * 2 * c..v * 2 * c + c].copy_from_slice(f_i.feature(v));
        feats[v * 2 * c + c..(v + 1) * 2 * c].copy_from_slice(f_l.feature(v));
    }
    SparseFeatureGrid::from_parts(*f_i.spec(), 2 * c, feats, mask)
}

/// Splits a `[F_I | F_L]` gradient into its two halves.
pub fn concat_backward(c: usize, grad_fused: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = grad_fused.len() / (2 * c);
    let mut gi = Vec::with_capacity(n * c);
    let mut gl = Vec::with_capacity(n * c);
    for v in 0..n {
        gi.extend_from_slice(&grad_fused[v * 2 * c..v * 2 * c + c]);
        gl.extend_from_slice(&grad_fused[v * 2 * c + c..(v + 1) * 2 * c]);
    }
    (gi, gl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{extract_nonempty, CoordSource};
    use crate::geometry::GridSpec;

    fn one_voxel(v: &[f64]) -> SparseFeatureGrid {
        let spec = GridSpec::new([0.0; 3], 1.0, [1, 1, 1]).unwrap();
        let mut g = SparseFeatureGrid::empty(spec, v.len()).unwrap();
        g.set(0, v).unwrap();
        g
    }

    #[test]
    fn hand_fused_row() {
        let fi = one_voxel(&[1.0, 0.0]);
        let fl = one_voxel(&[0.0, 3.0]);
        let lidar = extract_nonempty(&fl, CoordSource::Lidar);
        let w = DenseArray::new(vec![1, 1], vec![0.5]).unwrap();
        let f = gs_fuse(&fi, &fl, &w, &lidar).unwrap();
        assert_eq!(f.channels(), 6);
        assert_eq!(f.feature(0), &[1.0, 0.0, 0.0, 3.0, 0.0, 1.5]);
    }

    #[test]
    fn zero_omega_blanks_third_block() {
        let fi = one_voxel(&[1.0, 2.0]);
        let fl = one_voxel(&[3.0, 4.0]);
        let lidar = extract_nonempty(&fl, CoordSource::Lidar);
        let w = DenseArray::zeros(vec![1, 1]);
        let f = gs_fuse(&fi, &fl, &w, &lidar).unwrap();
        assert_eq!(f.feature(0), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
        let base = fuse_baseline_concat(&fi, &fl).unwrap();
        assert_eq!(base.feature(0), &f.feature(0)[..4]);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let fi = one_voxel(&[1.0, 2.0]);
        let fl = one_voxel(&[3.0]);
        assert!(matches!(
            fuse_baseline_concat(&fi, &fl),
            Err(Error::Config(_))
        ));
        let fl = one_voxel(&[3.0, 1.0]);
        let lidar = extract_nonempty(&fl, CoordSource::Lidar);
        let w = DenseArray::zeros(vec![2, 1]);
        assert!(gs_fuse(&fi, &fl, &w, &lidar).is_err());
    }
}
