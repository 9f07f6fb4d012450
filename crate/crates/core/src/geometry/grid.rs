//! Voxel grid specification and masked feature volumes.
//!
//! Voxel `(d, h, w)` spans `origin + [w, w+1) x [h, h+1) x [d, d+1)` voxel sizes
//! along ego x, y, z respectively. Flat indices are row-major over `(d, h, w)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::{Error, Result};

/// Upper bound on cells in one grid (about 256 MiB of f64 features at C = 2).
pub const DEFAULT_MAX_CELLS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Ego-frame position of the outer corner of voxel (0, 0, 0), meters.
    pub origin: [f64; 3],
    pub voxel_size: f64,
    /// `(D, H, W)`: cells along z, y, x.
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        let s = Self {
            origin,
            voxel_size,
            dims,
        };
        s.validate(DEFAULT_MAX_CELLS)?;
        Ok(s)
    }

    /// 32 x 32 x 8 cells of 0.5 m centered on the ego origin in x/y, z from -1 m.
    pub fn toy() -> Self {
        Self {
            origin: [-8.0, -8.0, -1.0],
            voxel_size: 0.5,
            dims: [8, 32, 32],
        }
    }

    /// The 100 x 100 x 8 feature volume of the full-scale setting.
    pub fn full_scale() -> Self {
        Self {
            origin: [-25.0, -25.0, -1.0],
            voxel_size: 0.5,
            dims: [8, 100, 100],
        }
    }

    pub fn validate(&self, max_cells: usize) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::config(format!(
                "voxel size {} must be positive",
                self.voxel_size
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "grid dims {:?} must be positive",
                self.dims
            )));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("grid origin must be finite"));
        }
        let n = self
            .dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if n > max_cells {
            return Err(Error::config(format!(
                "grid of {n} cells exceeds budget of {max_cells}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    #[inline]
    pub fn unflat(&self, i: usize) -> [usize; 3] {
        let w = i % self.dims[2];
        let h = (i / self.dims[2]) % self.dims[1];
        let d = i / (self.dims[1] * self.dims[2]);
        [d, h, w]
    }

    /// Containing voxel under half-open `[lo, hi)` cells; `None` outside the grid.
    pub fn locate(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let q = self.continuous(p);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = q[a].floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Position in voxel units relative to the grid corner, ordered `(d, h, w)`.
    #[inline]
    pub fn continuous(&self, p: [f64; 3]) -> [f64; 3] {
        let inv = 1.0 / self.voxel_size;
        [
            (p[2] - self.origin[2]) * inv,
            (p[1] - self.origin[1]) * inv,
            (p[0] - self.origin[0]) * inv,
        ]
    }

    /// Ego-frame center of voxel `(d, h, w)`.
    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        let s = self.voxel_size;
        [
            self.origin[0] + (idx[2] as f64 + 0.5) * s,
            self.origin[1] + (idx[1] as f64 + 0.5) * s,
            self.origin[2] + (idx[0] as f64 + 0.5) * s,
        ]
    }

    /// Ego-frame bounds `(min, max)` of the whole grid.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let s = self.voxel_size;
        let max = [
            self.origin[0] + self.dims[2] as f64 * s,
            self.origin[1] + self.dims[1] as f64 * s,
            self.origin[2] + self.dims[0] as f64 * s,
        ];
        (self.origin, max)
    }
}

/// A `D x H x W x C` feature volume with a non-empty mask.
///
/// Masked-off voxels always hold all-zero features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureGrid {
    spec: GridSpec,
    channels: usize,
    features: Vec<f64>,
    mask: Vec<bool>,
}

const GRID_MAGIC: &[u8; 8] = b"COOCGRID";
const GRID_VERSION: u32 = 1;

impl SparseFeatureGrid {
    pub fn empty(spec: GridSpec, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("feature grid needs at least one channel"));
        }
        spec.validate(DEFAULT_MAX_CELLS)?;
        let n = spec.n_cells();
        Ok(Self {
            spec,
            channels,
            features: vec![0.0; n * channels],
            mask: vec![false; n],
        })
    }

    /// Builds a grid from raw parts, zeroing masked-off rows.
    pub fn from_parts(
        spec: GridSpec,
        channels: usize,
        features: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let mut g = Self::empty(spec, channels)?;
        if features.len() != g.features.len() || mask.len() != g.mask.len() {
            return Err(Error::dim(
                format!(
                    "{} features and {} mask cells",
                    g.features.len(),
                    g.mask.len()
                ),
                format!("{} and {}", features.len(), mask.len()),
            ));
        }
        g.features = features;
        g.mask = mask;
        g.enforce_mask();
        Ok(g)
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_set(&self, flat: usize) -> bool {
        self.mask[flat]
    }

    #[inline]
    pub fn feature(&self, flat: usize) -> &[f64] {
        &self.features[flat * self.channels..(flat + 1) * self.channels]
    }

    /// Writes a feature row and marks the voxel non-empty.
    pub fn set(&mut self, flat: usize, feature: &[f64]) -> Result<()> {
        if feature.len() != self.channels {
            return Err(Error::dim(
                format!("{} channels", self.channels),
                format!("{}", feature.len()),
            ));
        }
        self.features[flat * self.channels..(flat + 1) * self.channels].copy_from_slice(feature);
        self.mask[flat] = true;
        Ok(())
    }

    pub(crate) fn mark(&mut self, flat: usize) {
        self.mask[flat] = true;
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn nonempty_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Zeros every masked-off feature row.
    pub fn enforce_mask(&mut self) {
        let c = self.channels;
        for (i, &m) in self.mask.iter().enumerate() {
            if !m {
                self.features[i * c..(i + 1) * c]
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
    }

    /// True when every masked-off row is exactly zero and all values are finite.
    pub fn invariants_hold(&self) -> bool {
        let c = self.channels;
        self.features.iter().all(|v| v.is_finite())
            && self
                .mask
                .iter()
                .enumerate()
                .all(|(i, &m)| m || self.features[i * c..(i + 1) * c].iter().all(|&v| v == 0.0))
    }

    /// Channels `[start, end)` as a new grid sharing this grid's mask.
    pub fn channel_block(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.channels {
            return Err(Error::config(format!(
                "channel block {start}..{end} outside {} channels",
                self.channels
            )));
        }
        let w = end - start;
        let mut features = Vec::with_capacity(self.mask.len() * w);
        for i in 0..self.mask.len() {
            features.extend_from_slice(&self.feature(i)[start..end]);
        }
        Ok(Self {
            spec: self.spec,
            channels: w,
            features,
            mask: self.mask.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GRID_MAGIC);
        w.u32(GRID_VERSION);
        write_spec(&mut w, &self.spec);
        w.u32(self.channels as u32);
        for &v in &self.features {
            w.f32(v as f32);
        }
        for chunk in self.mask.chunks(8) {
            let mut b = 0u8;
            for (i, &m) in chunk.iter().enumerate() {
                if m {
                    b |= 1 << i;
                }
            }
            w.u8(b);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let version = r.header(GRID_MAGIC, "feature grid")?;
        if version != GRID_VERSION {
            return Err(Error::Version(format!(
                "grid version {version}, expected {GRID_VERSION}"
            )));
        }
        let spec = read_spec(&mut r)?;
        let channels = r.u32()? as usize;
        let mut g = Self::empty(spec, channels)?;
        for v in g.features.iter_mut() {
            *v = r.f32()? as f64;
        }
        let n = g.mask.len();
        let bits = r.take(n.div_ceil(8))?;
        for (i, m) in g.mask.iter_mut().enumerate() {
            *m = bits[i / 8] >> (i % 8) & 1 == 1;
        }
        r.finish()?;
        if !g.invariants_hold() {
            return Err(Error::Format(
                "masked-off voxel carries non-zero features".into(),
            ));
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub(crate) fn write_spec(w: &mut ByteWriter, spec: &GridSpec) {
    for &o in &spec.origin {
        w.f64(o);
    }
    w.f64(spec.voxel_size);
    for &d in &spec.dims {
        w.u32(d as u32);
    }
}

pub(crate) fn read_spec(r: &mut ByteReader<'_>) -> Result<GridSpec> {
    let origin = [r.f64()?, r.f64()?, r.f64()?];
    let voxel_size = r.f64()?;
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    GridSpec::new(origin, voxel_size, dims)
}
