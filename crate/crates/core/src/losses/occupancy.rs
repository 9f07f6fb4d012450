use super::{SemanticOccGrid, IGNORE_LABEL};
use crate::nn::{softmax_row, DenseArray};
use crate::{Error, Result};

/// A scalar loss with its gradient w.r.t. the input it was computed from.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: DenseArray,
    /// Elements that contributed (voxels or pixels).
    pub count: usize,
}

fn check(scores: &DenseArray, labels: &SemanticOccGrid) -> Result<usize> {
    let n_c = scores.last_dim();
    if scores.shape().len() != 2 || scores.rows() != labels.len() || n_c != labels.n_classes {
        return Err(Error::dim(
            format!("[{}, {}]", labels.len(), labels.n_classes),
            format!("{:?}", scores.shape()),
        ));
    }
    Ok(n_c)
}

/// Mean `-log softmax(logits)[label]` over non-ignored voxels.
pub fn cross_entropy_loss(logits: &DenseArray, labels: &SemanticOccGrid) -> Result<LossValue> {
    let n_c = check(logits, labels)?;
    let mut grad = DenseArray::zeros(logits.shape().to_vec());
    let count = labels.labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if count == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad,
            count,
        });
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    let mut p = vec![0.0; n_c];
    for (v, &l) in labels.labels.iter().enumerate() {
        if l == IGNORE_LABEL {
            continue;
        }
        let row = logits.row(v);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[l as usize];
        softmax_row(row, &mut p);
        let g = grad.row_mut(v);
        for c in 0..n_c {
            g[c] = inv * (p[c] - if c == l as usize { 1.0 } else { 0.0 });
        }
    }
    Ok(LossValue {
        value: total * inv,
        grad,
        count,
    })
}

/// Lovász-softmax over probabilities: the Lovász extension of each present
/// class's Jaccard loss, averaged over classes present in the labels.
/// Ties in the error sort keep voxel order.
pub fn lovasz_softmax_loss(probs: &DenseArray, labels: &SemanticOccGrid) -> Result<LossValue> {
    let n_c = check(probs, labels)?;
    let mut grad = DenseArray::zeros(probs.shape().to_vec());
    let valid: Vec<usize> = (0..labels.len())
        .filter(|&v| labels.labels[v] != IGNORE_LABEL)
        .collect();
    let present: Vec<usize> = (0..n_c)
        .filter(|&c| valid.iter().any(|&v| labels.labels[v] as usize == c))
        .collect();
    if present.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            grad,
            count: 0,
        });
    }
    let inv = 1.0 / present.len() as f64;
    let mut total = 0.0;
    let mut errs: Vec<(f64, usize, bool)> = Vec::with_capacity(valid.len());
    for &c in &present {
        errs.clear();
        for &v in &valid {
            let fg = labels.labels[v] as usize == c;
            let p = probs.row(v)[c];
            errs.push(((if fg { 1.0 } else { 0.0 } - p).abs(), v, fg));
        }
        errs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let gts = errs.iter().filter(|e| e.2).count() as f64;
        let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
        let mut prev = 0.0;
        for &(e, v, fg) in &errs {
            if fg {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let weight = jac - prev;
            prev = jac;
            total += inv * e * weight;
            grad.row_mut(v)[c] += inv * weight * if fg { -1.0 } else { 1.0 };
        }
    }
    Ok(LossValue {
        value: total,
        grad,
        count: valid.len(),
    })
}

/// Cross-entropy plus Lovász-softmax with the gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct OccupancyLoss {
    pub l_ce: f64,
    pub l_ls: f64,
    pub grad: DenseArray,
    /// True when every voxel carried the ignore label.
    pub all_ignored: bool,
}

impl OccupancyLoss {
    pub fn value(&self) -> f64 {
        self.l_ce + self.l_ls
    }
}

pub fn occupancy_loss(logits: &DenseArray, labels: &SemanticOccGrid) -> Result<OccupancyLoss> {
    let n_c = check(logits, labels)?;
    let ce = cross_entropy_loss(logits, labels)?;
    let mut probs = DenseArray::zeros(logits.shape().to_vec());
    for v in 0..logits.rows() {
        softmax_row(logits.row(v), probs.row_mut(v));
    }
    let ls = lovasz_softmax_loss(&probs, labels)?;
    let mut grad = ce.grad;
    for v in 0..logits.rows() {
        let p = probs.row(v);
        let g = ls.grad.row(v);
        let s: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let out = grad.row_mut(v);
        for c in 0..n_c {
            out[c] += p[c] * (g[c] - s);
        }
    }
    Ok(OccupancyLoss {
        l_ce: ce.value,
        l_ls: ls.value,
        grad,
        all_ignored: ce.count == 0,
    })
}
