//! Confusion matrix, geometric IoU and semantic mIoU.

use crate::losses::{SemanticOccGrid, IGNORE_LABEL};
use crate::{Error, Result};

/// Counts indexed `[gt][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

/// True positives, false positives and false negatives of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassStats {
    /// `None` when the class appears in neither prediction nor ground truth.
    pub fn iou(&self) -> Option<f64> {
        let den = self.tp + self.fp + self.fn_;
        (den > 0).then(|| self.tp as f64 / den as f64)
    }
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::dim(
                format!("{} classes", self.n_classes),
                other.n_classes.to_string(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn class_stats(&self, c: usize) -> ClassStats {
        let n = self.n_classes;
        let tp = self.get(c, c);
        let row: u64 = (0..n).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..n).map(|g| self.get(g, c)).sum();
        ClassStats {
            tp,
            fp: col - tp,
            fn_: row - tp,
        }
    }

    /// All semantic classes collapsed into one occupied class against free (0).
    pub fn occupied_stats(&self) -> ClassStats {
        let n = self.n_classes;
        let mut s = ClassStats::default();
        for g in 0..n {
            for p in 0..n {
                let v = self.get(g, p);
                match (g != 0, p != 0) {
                    (true, true) => s.tp += v,
                    (false, true) => s.fp += v,
                    (true, false) => s.fn_ += v,
                    (false, false) => {}
                }
            }
        }
        s
    }
}

pub fn confusion(pred: &SemanticOccGrid, gt: &SemanticOccGrid) -> Result<ConfusionMatrix> {
    if pred.spec != gt.spec || pred.labels.len() != gt.labels.len() {
        return Err(Error::dim(
            format!("prediction on grid {:?}", gt.spec.dims),
            format!("{:?}", pred.spec.dims),
        ));
    }
    if pred.n_classes != gt.n_classes {
        return Err(Error::dim(
            format!("{} classes", gt.n_classes),
            pred.n_classes.to_string(),
        ));
    }
    let mut m = ConfusionMatrix::new(gt.n_classes);
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p == IGNORE_LABEL || g == IGNORE_LABEL {
            continue;
        }
        m.counts[g as usize * m.n_classes + p as usize] += 1;
    }
    Ok(m)
}

/// Occupied-vs-free IoU. With no occupied voxel in either grid the
/// denominator vanishes and the score is 1.
pub fn iou(m: &ConfusionMatrix) -> f64 {
    m.occupied_stats().iou().unwrap_or(1.0)
}

/// Mean IoU over semantic classes `1..N_c`, skipping classes absent from both
/// grids. If every class is skipped the score is 1.
pub fn miou(m: &ConfusionMatrix) -> f64 {
    let ious: Vec<f64> = (1..m.n_classes)
        .filter_map(|c| m.class_stats(c).iou())
        .collect();
    if ious.is_empty() {
        1.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

/// Per-class IoU rows followed by mIoU and IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, Option<f64>)>,
}

impl MetricReport {
    pub fn from_matrix(m: &ConfusionMatrix, class_names: &[String]) -> Self {
        let mut rows: Vec<(String, Option<f64>)> = (1..m.n_classes)
            .map(|c| {
                let name = class_names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| format!("class_{c}"));
                (name, m.class_stats(c).iou())
            })
            .collect();
        rows.push(("mIoU".into(), Some(miou(m))));
        rows.push(("IoU".into(), Some(iou(m))));
        Self { rows }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == name).and_then(|r| r.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (name, v) in &self.rows {
            match v {
                Some(v) => s.push_str(&format!("{name},{v:.6}\n")),
                None => s.push_str(&format!("{name},\n")),
            }
        }
        s
    }

    pub fn pretty(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.0.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = String::new();
        for (name, v) in &self.rows {
            match v {
                Some(v) => s.push_str(&format!("{name:<width$}  {:>6.2}\n", 100.0 * v)),
                None => s.push_str(&format!("{name:<width$}  {:>6}\n", "n/a")),
            }
        }
        s
    }
}
