use super::LossValue;
use crate::geometry::{DepthDistribution, DepthMap};
use crate::nn::DenseArray;
use crate::{Error, Result};

/// Probability floor inside the log so an exactly-zero bin stays finite.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DepthBinLoss {
    pub loss: LossValue,
    /// Valid LiDAR pixels whose depth fell outside the bin range.
    pub skipped: usize,
}

/// Cross-entropy of the predicted bin distribution against the bin holding the
/// LiDAR depth, averaged over valid pixels. The gradient is w.r.t. the probabilities.
pub fn explicit_depth_loss(pred: &DepthDistribution, lidar: &DepthMap) -> Result<DepthBinLoss> {
    if pred.h != lidar.h || pred.w != lidar.w {
        return Err(Error::dim(
            format!("{}x{} depth map", pred.h, pred.w),
            format!("{}x{}", lidar.h, lidar.w),
        ));
    }
    let nb = pred.bins.n_bins;
    let mut grad = DenseArray::zeros(vec![pred.h * pred.w, nb]);
    let mut targets = Vec::new();
    let mut skipped = 0;
    for px in 0..pred.h * pred.w {
        if !lidar.mask[px] {
            continue;
        }
        match pred.bins.bin_of(lidar.depth[px]) {
            Some(b) => targets.push((px, b)),
            None => skipped += 1,
        }
    }
    if targets.is_empty() {
        return Ok(DepthBinLoss {
            loss: LossValue {
                value: 0.0,
                grad,
                count: 0,
            },
            skipped,
        });
    }
    let inv = 1.0 / targets.len() as f64;
    let mut total = 0.0;
    for &(px, b) in &targets {
        let p = pred.pixel(px)[b];
        if p > PROB_FLOOR {
            total -= p.ln();
            grad.row_mut(px)[b] = -inv / p;
        } else {
            total -= PROB_FLOOR.ln();
        }
    }
    Ok(DepthBinLoss {
        loss: LossValue {
            value: total * inv,
            grad,
            count: targets.len(),
        },
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DepthBins;

    fn map(depth: Vec<f64>, mask: Vec<bool>) -> DepthMap {
        DepthMap {
            h: 1,
            w: depth.len(),
            depth,
            mask,
        }
    }

    #[test]
    fn uniform_bins_give_ln8() {
        let bins = DepthBins::new(8, 0.0, 8.0).unwrap();
        let pred = DepthDistribution::uniform(1, 2, bins);
        let l = explicit_depth_loss(&pred, &map(vec![2.5, 7.0], vec![true, true])).unwrap();
        assert!((l.loss.value - 8f64.ln()).abs() < 1e-12);
        assert_eq!(l.loss.count, 2);
    }

    #[test]
    fn one_hot_correct_is_zero_and_outside_skipped() {
        let bins = DepthBins::new(2, 0.0, 2.0).unwrap();
        let pred = DepthDistribution::new(1, 2, bins, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let l = explicit_depth_loss(&pred, &map(vec![1.5, 9.0], vec![true, true])).unwrap();
        assert_eq!(l.loss.value, 0.0);
        assert_eq!(l.skipped, 1);
    }

    #[test]
    fn no_valid_pixels() {
        let bins = DepthBins::new(4, 0.0, 4.0).unwrap();
        let pred = DepthDistribution::uniform(1, 1, bins);
        let l = explicit_depth_loss(&pred, &map(vec![1.0], vec![false])).unwrap();
        assert_eq!(l.loss.value, 0.0);
        assert!(l.loss.grad.data().iter().all(|&g| g == 0.0));
    }
}
