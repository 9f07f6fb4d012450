use crate::geometry::SparseFeatureGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSource {
    Lidar,
    Camera,
}

/// Integer voxel coordinates `(d, h, w)` of non-empty voxels, plus their flat indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordList {
    pub entries: Vec<[i32; 3]>,
    pub flat: Vec<usize>,
    pub source: CoordSource,
}

impl CoordList {
    pub fn new(entries: Vec<[i32; 3]>, source: CoordSource) -> Self {
        Self {
            flat: vec![usize::MAX; entries.len()],
            entries,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Masked-true voxels in `(d, h, w)` lexicographic order.
pub fn extract_nonempty(grid: &SparseFeatureGrid, source: CoordSource) -> CoordList {
    let spec = grid.spec();
    let mut entries = Vec::new();
    let mut flat = Vec::new();
    for (i, &m) in grid.mask().iter().enumerate() {
        if m {
            let [d, h, w] = spec.unflat(i);
            entries.push([d as i32, h as i32, w as i32]);
            flat.push(i);
        }
    }
    CoordList {
        entries,
        flat,
        source,
    }
}
