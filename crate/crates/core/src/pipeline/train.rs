//! Mini-batch AdamW training over prepared scenes.
//!
//! Per-scene gradients are computed in parallel and summed in scene order, so a
//! run is a pure function of config, seed and thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use super::dataset::{prepare_split, PreparedScene, Split};
use super::eval::{evaluate, with_pool};
use super::forward::{forward_backward, forward_pipeline, ForwardOptions};
use super::model::Model;
use crate::losses::LossReport;
use crate::nn::AdamW;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Batch mean.
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub mean: LossReport,
    /// `(IoU, mIoU)` on the eval split when evaluated.
    pub metrics: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch; kept out of the CSV logs.
    pub timings: Vec<f64>,
}

impl TrainLog {
    pub fn steps_csv(&self) -> String {
        let mut s = format!("step,epoch,{}\n", LossReport::CSV_HEADER);
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.epoch, r.report.csv_fields());
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = format!("epoch,{},iou,miou\n", LossReport::CSV_HEADER);
        for r in &self.epochs {
            let (iou, miou) = match r.metrics {
                Some((a, b)) => (format!("{a:.6}"), format!("{b:.6}")),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{},{},{iou},{miou}", r.epoch, r.mean.csv_fields());
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for (e, t) in self.timings.iter().enumerate() {
            let _ = writeln!(s, "{},{t:.3}", e + 1);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub log: TrainLog,
    pub model: Model,
    /// Path of the final checkpoint when an output directory was used.
    pub checkpoint: Option<PathBuf>,
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints")
        .join(format!("epoch_{epoch:03}.ckpt"))
}

/// Generates both splits from `cfg` and trains, writing into `cfg.output_dir`.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let (train_set, eval_set) = with_pool(cfg.threads, || -> Result<_> {
        Ok((
            prepare_split(cfg, Split::Train, cfg.data.n_train)?,
            prepare_split(cfg, Split::Eval, cfg.data.n_eval)?,
        ))
    })??;
    train_on(cfg, &train_set, &eval_set, Some(&cfg.output_dir))
}

/// Mean training-mode report of `model` over `scenes`.
pub fn suite_loss(cfg: &RunConfig, model: &Model, scenes: &[PreparedScene]) -> Result<LossReport> {
    let reports = with_pool(cfg.threads, || {
        scenes
            .par_iter()
            .map(|s| forward_pipeline(s, model, cfg, ForwardOptions::training()).map(|f| f.report))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut mean = LossReport::default();
    for r in &reports {
        mean.accumulate(r, 1.0 / reports.len().max(1) as f64);
    }
    Ok(mean)
}

/// Trains on `train_set`; evaluates on `eval_set` every `eval_every` epochs.
/// With `out`, writes logs, the config and checkpoints there.
pub fn train_on(
    cfg: &RunConfig,
    train_set: &[PreparedScene],
    eval_set: &[PreparedScene],
    out: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    with_pool(cfg.threads, || train_inner(cfg, train_set, eval_set, out))?
}

fn train_inner(
    cfg: &RunConfig,
    train_set: &[PreparedScene],
    eval_set: &[PreparedScene],
    out: Option<&Path>,
) -> Result<TrainOutput> {
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(Error::config("no training scenes"));
    }
    let mut model = Model::init(cfg)?;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut log = TrainLog::default();
    if let Some(out) = out {
        mkdir(&out.join("checkpoints"))?;
        write(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
        model.save(&checkpoint_path(out, 0))?;
    }
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d),
        );
        order.shuffle(&mut rng);
        let mut epoch_mean = LossReport::default();
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for batch in order.chunks(cfg.batch_size) {
            let results = with_pool(cfg.threads, || {
                batch
                    .par_iter()
                    .map(|&i| {
                        forward_backward(&train_set[i], &model, cfg, ForwardOptions::training())
                    })
                    .collect::<Result<Vec<_>>>()
            })??;
            let scale = 1.0 / batch.len() as f64;
            let mut grads = model.zeros_like();
            let mut report = LossReport::default();
            for (fwd, g) in &results {
                grads.add_scaled(scale, g);
                report.accumulate(&fwd.report, scale);
            }
            let bad = if !report.total.is_finite() {
                Some("loss".to_string())
            } else {
                grads.first_non_finite()
            };
            if let Some(param) = bad {
                if let Some(out) = out {
                    model.save(&out.join("last_good.ckpt"))?;
                }
                return Err(Error::Training {
                    param,
                    message: format!(
                        "non-finite value at step {step} (epoch {epoch}); training aborted"
                    ),
                });
            }
            let params = model.tensors_mut();
            let g: Vec<(String, &[f64])> = grads
                .tensors()
                .into_iter()
                .map(|(n, _, d)| (n, d))
                .collect();
            opt.step(params, g)?;
            epoch_mean.accumulate(&report, 1.0 / n_batches as f64);
            log.steps.push(StepRecord {
                step,
                epoch,
                report,
            });
            step += 1;
        }
        let metrics = if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !eval_set.is_empty() {
            let e = evaluate(cfg, &model, eval_set)?;
            Some((e.iou(), e.miou()))
        } else {
            None
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean: epoch_mean,
            metrics,
        });
        log.timings.push(started.elapsed().as_secs_f64());
        if let Some(out) = out {
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
                || epoch == cfg.epochs
            {
                model.save(&checkpoint_path(out, epoch))?;
            }
        }
    }
    let checkpoint = match out {
        Some(out) => {
            write(&out.join("train_log.csv"), log.steps_csv().as_bytes())?;
            write(&out.join("epoch_metrics.csv"), log.epochs_csv().as_bytes())?;
            write(&out.join("timings.csv"), log.timings_csv().as_bytes())?;
            let path = out.join("model.ckpt");
            model.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutput {
        log,
        model,
        checkpoint,
    })
}
