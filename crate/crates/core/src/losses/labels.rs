use std::path::Path;

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::geometry::{read_spec, write_spec, GridSpec};
use crate::{Error, Result};

/// Label id excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

const MAGIC: &[u8; 8] = b"COOCOCCG";
const VERSION: u32 = 1;

/// Dense per-voxel class ids; 0 is free space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticOccGrid {
    pub spec: GridSpec,
    pub n_classes: usize,
    pub labels: Vec<u8>,
}

impl SemanticOccGrid {
    pub fn new(spec: GridSpec, n_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if !(2..=255).contains(&n_classes) {
            return Err(Error::config(format!(
                "n_classes must lie in 2..=255, got {n_classes}"
            )));
        }
        if labels.len() != spec.n_cells() {
            return Err(Error::dim(
                format!("{} labels for dims {:?}", spec.n_cells(), spec.dims),
                labels.len().to_string(),
            ));
        }
        if let Some(i) = labels
            .iter()
            .position(|&l| l as usize >= n_classes && l != IGNORE_LABEL)
        {
            return Err(Error::config(format!(
                "label {} at voxel {i} is not below n_classes = {n_classes}",
                labels[i]
            )));
        }
        Ok(Self {
            spec,
            n_classes,
            labels,
        })
    }

    pub fn free(spec: GridSpec, n_classes: usize) -> Result<Self> {
        Self::new(spec, n_classes, vec![0; spec.n_cells()])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn occupied_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != 0 && l != IGNORE_LABEL)
            .count()
    }

    pub fn is_occupied(&self, flat: usize) -> bool {
        let l = self.labels[flat];
        l != 0 && l != IGNORE_LABEL
    }

    /// Argmax over `[V, N_c]` logits; ties go to the lower class id.
    pub fn from_logits(spec: GridSpec, logits: &crate::nn::DenseArray) -> Result<Self> {
        let n_c = logits.last_dim();
        if logits.rows() != spec.n_cells() {
            return Err(Error::dim(
                format!("{} logit rows", spec.n_cells()),
                logits.rows().to_string(),
            ));
        }
        let labels = (0..logits.rows())
            .map(|v| {
                let row = logits.row(v);
                let mut best = 0;
                for (c, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Self::new(spec, n_c, labels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        write_spec(&mut w, &self.spec);
        w.u32(self.n_classes as u32);
        w.bytes(&self.labels);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let v = r.header(MAGIC, "semantic occupancy grid")?;
        if v != VERSION {
            return Err(Error::Version(format!(
                "occupancy grid version {v}, expected {VERSION}"
            )));
        }
        let spec = read_spec(&mut r)?;
        let n_classes = r.u32()? as usize;
        let labels = r.take(spec.n_cells())?.to_vec();
        r.finish()?;
        Self::new(spec, n_classes, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
