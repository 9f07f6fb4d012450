//! Procedural occupancy scenes: a ground slab plus boxes and cylinders.
//!
//! Class 1 is the ground. Objects draw classes from `2..n_c` (or class 1 when
//! `n_c == 2`); classes share one shape distribution and differ by color and, more
//! weakly, by LiDAR intensity. The ego pose is the identity.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::geometry::{read_spec, write_spec, GridSpec};
use crate::losses::SemanticOccGrid;
use crate::{Error, Result};

const SCENE_MAGIC: &[u8; 8] = b"COOCSCNE";
const SCENE_VERSION: u32 = 1;

/// Scenes above this occupied fraction are rejected.
pub const MAX_OCCUPANCY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    pub ground: bool,
    /// Objects keep this far (meters) from the ego origin in x/y.
    pub keep_out: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_objects: 4,
            max_objects: 8,
            ground: true,
            keep_out: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Inclusive cell ranges `[lo, hi]` along `(d, h, w)`.
    Box { lo: [usize; 3], hi: [usize; 3] },
    /// Vertical cylinder over `d` in `[d_lo, d_hi]` around a center in `(h, w)` cells.
    Cylinder {
        d_lo: usize,
        d_hi: usize,
        center: [f64; 2],
        radius: f64,
    },
}

impl Shape {
    pub fn contains(&self, idx: [usize; 3]) -> bool {
        match *self {
            Shape::Box { lo, hi } => (0..3).all(|a| idx[a] >= lo[a] && idx[a] <= hi[a]),
            Shape::Cylinder {
                d_lo,
                d_hi,
                center,
                radius,
            } => {
                let dh = idx[1] as f64 + 0.5 - center[0];
                let dw = idx[2] as f64 + 0.5 - center[1];
                idx[0] >= d_lo && idx[0] <= d_hi && dh * dh + dw * dw <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub gt_occ: SemanticOccGrid,
    /// Per-voxel RGB in `[0, 1]`, `Some` exactly on occupied voxels.
    pub gt_color: Vec<Option<[f64; 3]>>,
    pub rng_seed: u64,
}

/// Base color of a class; objects spread from red to blue.
pub fn class_color(class: usize, n_classes: usize) -> [f64; 3] {
    match class {
        0 => [0.0, 0.0, 0.0],
        1 => [0.45, 0.42, 0.38],
        c => {
            let span = (n_classes.saturating_sub(3)).max(1) as f64;
            let t = (c - 2) as f64 / span;
            [0.85 - 0.65 * t, 0.3, 0.2 + 0.65 * t]
        }
    }
}

/// Mean LiDAR return intensity of a class. Intensity tells ground from
/// objects but not one object class from another.
pub fn class_intensity(class: usize, _n_classes: usize) -> f64 {
    match class {
        0 => 0.0,
        1 => 0.2,
        _ => 0.5,
    }
}

fn quantize(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0) as f32 as f64)
}

impl SyntheticScene {
    /// All-free scene.
    pub fn empty(spec: GridSpec, n_classes: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            gt_occ: SemanticOccGrid::free(spec, n_classes)?,
            gt_color: vec![None; spec.n_cells()],
            rng_seed: seed,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.gt_occ.spec
    }

    /// Fills `shape` with `class` and `color`, overwriting earlier content.
    pub fn paint(&mut self, shape: &Shape, class: u8, color: [f64; 3]) {
        let spec = self.gt_occ.spec;
        for i in 0..spec.n_cells() {
            if shape.contains(spec.unflat(i)) {
                self.gt_occ.labels[i] = class;
                self.gt_color[i] = Some(quantize(color));
            }
        }
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.gt_occ.occupied_count() as f64 / self.gt_occ.len().max(1) as f64
    }

    pub fn colors_consistent(&self) -> bool {
        (0..self.gt_occ.len()).all(|i| self.gt_occ.is_occupied(i) == self.gt_color[i].is_some())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(SCENE_MAGIC);
        w.u32(SCENE_VERSION);
        w.u64(self.rng_seed);
        write_spec(&mut w, &self.gt_occ.spec);
        w.u32(self.gt_occ.n_classes as u32);
        w.bytes(&self.gt_occ.labels);
        for c in self.gt_color.iter().flatten() {
            for &v in c {
                w.f32(v as f32);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let version = r.header(SCENE_MAGIC, "scene")?;
        if version != SCENE_VERSION {
            return Err(Error::Version(format!(
                "scene version {version}, expected {SCENE_VERSION}"
            )));
        }
        let rng_seed = r.u64()?;
        let spec = read_spec(&mut r)?;
        let n_classes = r.u32()? as usize;
        let labels = r.take(spec.n_cells())?.to_vec();
        let gt_occ = SemanticOccGrid::new(spec, n_classes, labels)?;
        let mut gt_color = vec![None; spec.n_cells()];
        for (i, slot) in gt_color.iter_mut().enumerate() {
            if gt_occ.is_occupied(i) {
                *slot = Some([r.f32()? as f64, r.f32()? as f64, r.f32()? as f64]);
            }
        }
        r.finish()?;
        Ok(Self {
            gt_occ,
            gt_color,
            rng_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn random_shape(
    rng: &mut ChaCha8Rng,
    spec: &GridSpec,
    base: usize,
    keep_out_cells: f64,
) -> Option<Shape> {
    let [d_n, h_n, w_n] = spec.dims;
    if base >= d_n {
        return None;
    }
    // ego origin in (h, w) cell coordinates
    let c = spec.continuous([0.0, 0.0, 0.0]);
    let ego = [c[1], c[2]];
    let height = rng.gen_range(2..=6usize).min(d_n - base);
    let d_hi = base + height - 1;
    for _ in 0..32 {
        let cylinder = rng.gen_bool(0.4);
        let shape = if cylinder {
            let radius = rng.gen_range(1.0..2.5);
            let center = [
                rng.gen_range(0.0..h_n as f64),
                rng.gen_range(0.0..w_n as f64),
            ];
            Shape::Cylinder {
                d_lo: base,
                d_hi,
                center,
                radius,
            }
        } else {
            let sh = rng.gen_range(2..=6usize).min(h_n);
            let sw = rng.gen_range(2..=6usize).min(w_n);
            let h0 = rng.gen_range(0..=h_n - sh);
            let w0 = rng.gen_range(0..=w_n - sw);
            Shape::Box {
                lo: [base, h0, w0],
                hi: [d_hi, h0 + sh - 1, w0 + sw - 1],
            }
        };
        // nearest point of the footprint to the ego origin
        let clear = match shape {
            Shape::Box { lo, hi } => {
                let dh = (lo[1] as f64 - ego[0])
                    .max(ego[0] - (hi[1] + 1) as f64)
                    .max(0.0);
                let dw = (lo[2] as f64 - ego[1])
                    .max(ego[1] - (hi[2] + 1) as f64)
                    .max(0.0);
                (dh * dh + dw * dw).sqrt()
            }
            Shape::Cylinder { center, radius, .. } => {
                ((center[0] - ego[0]).powi(2) + (center[1] - ego[1]).powi(2)).sqrt() - radius
            }
        };
        if clear >= keep_out_cells {
            return Some(shape);
        }
    }
    None
}

/// Deterministic scene for `seed`.
pub fn generate_scene(
    seed: u64,
    spec: &GridSpec,
    n_classes: usize,
    params: &SceneParams,
) -> Result<SyntheticScene> {
    if n_classes < 2 {
        return Err(Error::config(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if n_classes > 255 {
        return Err(Error::config(format!(
            "at most 255 classes, got {n_classes}"
        )));
    }
    if params.min_objects > params.max_objects {
        return Err(Error::config("min_objects exceeds max_objects"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SyntheticScene::empty(*spec, n_classes, seed)?;
    let [_, h_n, w_n] = spec.dims;
    let base = if params.ground {
        let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-0.04..0.04);
        let g = class_color(1, n_classes);
        for h in 0..h_n {
            for w in 0..w_n {
                let i = spec.flat([0, h, w]);
                scene.gt_occ.labels[i] = 1;
                scene.gt_color[i] = Some(quantize([
                    g[0] + jitter(&mut rng),
                    g[1] + jitter(&mut rng),
                    g[2] + jitter(&mut rng),
                ]));
            }
        }
        1
    } else {
        0
    };
    let n_obj = rng.gen_range(params.min_objects..=params.max_objects);
    let keep_out = params.keep_out / spec.voxel_size;
    for _ in 0..n_obj {
        let class = if n_classes == 2 {
            1
        } else {
            rng.gen_range(2..n_classes)
        };
        let Some(shape) = random_shape(&mut rng, spec, base, keep_out) else {
            continue;
        };
        let b = class_color(class, n_classes);
        let color = [
            b[0] + rng.gen_range(-0.08..0.08),
            b[1] + rng.gen_range(-0.08..0.08),
            b[2] + rng.gen_range(-0.08..0.08),
        ];
        scene.paint(&shape, class as u8, color);
    }
    if scene.occupied_fraction() > MAX_OCCUPANCY {
        return Err(Error::Generation(format!(
            "scene {seed} is {:.1}% occupied (limit {:.0}%)",
            100.0 * scene.occupied_fraction(),
            100.0 * MAX_OCCUPANCY
        )));
    }
    Ok(scene)
}
