//! Voxel-wise evaluation of a model on prepared scenes.

use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use super::dataset::PreparedScene;
use super::forward::{forward_pipeline, ForwardOptions};
use super::model::Model;
use crate::losses::SemanticOccGrid;
use crate::metrics::{confusion, iou, miou, ConfusionMatrix, MetricReport};
use crate::{Error, Result};

/// Runs `f` on a pool of `threads` workers, reusing the current one if it matches.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if rayon::current_thread_index().is_some() && rayon::current_num_threads() == threads {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub matrix: ConfusionMatrix,
    pub report: MetricReport,
}

impl Evaluation {
    pub fn iou(&self) -> f64 {
        iou(&self.matrix)
    }

    pub fn miou(&self) -> f64 {
        miou(&self.matrix)
    }
}

/// Pools the confusion of every `(prediction, ground truth)` pair.
pub fn evaluate_predictions(
    pairs: &[(SemanticOccGrid, &SemanticOccGrid)],
    class_names: &[String],
) -> Result<Evaluation> {
    let n = pairs.first().map_or(class_names.len(), |p| p.1.n_classes);
    let mut matrix = ConfusionMatrix::new(n);
    for (pred, gt) in pairs {
        matrix.merge(&confusion(pred, gt)?)?;
    }
    let report = MetricReport::from_matrix(&matrix, class_names);
    Ok(Evaluation { matrix, report })
}

/// Inference-mode argmax predictions, in scene order.
pub fn predict(
    cfg: &RunConfig,
    model: &Model,
    scenes: &[PreparedScene],
) -> Result<Vec<SemanticOccGrid>> {
    with_pool(cfg.threads, || {
        scenes
            .par_iter()
            .map(|s| forward_pipeline(s, model, cfg, ForwardOptions::inference())?.prediction())
            .collect::<Result<Vec<_>>>()
    })?
}

pub fn evaluate(cfg: &RunConfig, model: &Model, scenes: &[PreparedScene]) -> Result<Evaluation> {
    let preds = predict(cfg, model, scenes)?;
    let pairs: Vec<_> = preds
        .into_iter()
        .zip(scenes)
        .map(|(p, s)| (p, &s.scene.gt_occ))
        .collect();
    let mut ev = evaluate_predictions(&pairs, &cfg.class_names())?;
    if pairs.is_empty() {
        ev.matrix = ConfusionMatrix::new(cfg.n_classes);
        ev.report = MetricReport::from_matrix(&ev.matrix, &cfg.class_names());
    }
    Ok(ev)
}

/// Loads a checkpoint for `cfg`; an architecture mismatch is a version error.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    scenes: &[PreparedScene],
) -> Result<Evaluation> {
    let model = Model::load(cfg, checkpoint)?;
    evaluate(cfg, &model, scenes)
}
