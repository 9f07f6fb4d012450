use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coocc::losses::Branch;
use coocc::pipeline::export::write_ply;
use coocc::pipeline::{
    evaluate, forward_pipeline, prepare_scene, prepare_split, run_ablation, suite_config, train,
    ForwardOptions, Model, RunConfig, Split,
};
use coocc::render::image_io::{save_color, save_depth, DEFAULT_METERS_PER_UNIT};
use coocc::render::DepthMode;
use coocc::verify::{format_outcomes, gradient_suite, require_all};

#[derive(Parser)]
#[command(
    name = "coocc",
    version,
    about = "Multi-modal semantic occupancy on synthetic toy scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Fusion,
    Lidar,
    Camera,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthModeArg {
    Literal,
    Expected,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

/// Flags shared by every pipeline command.
#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the model seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    branch: Option<BranchArg>,
    #[arg(long, value_enum)]
    depth_mode: Option<DepthModeArg>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        self.config_or(RunConfig::default())
    }

    /// Like [`Common::config`], with `base` standing in for a missing `--config`.
    fn config_or(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(b) = self.branch {
            cfg.branch = match b {
                BranchArg::Fusion => Branch::LidarCamera,
                BranchArg::Lidar => Branch::LidarOnly,
                BranchArg::Camera => Branch::CameraOnly,
            };
        }
        if let Some(m) = self.depth_mode {
            cfg.depth_mode = match m {
                DepthModeArg::Literal => DepthMode::PaperLiteral,
                DepthModeArg::Expected => DepthMode::ExpectedDepth,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, LiDAR clouds and camera images.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Number of scenes; defaults to the split size in the config.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model and write logs and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render color and depth images of an eval scene from a checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Write occupied voxels of an eval scene as a colored PLY point set.
    ExportPly {
        #[command(flatten)]
        common: Common,
        /// Export the model prediction instead of the ground truth.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Run the component ablation and the modality-branch comparison.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Number of model seeds, starting at `--seed` (default 0).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Start from the pinned toy suite instead of the default config.
        #[arg(long)]
        suite: bool,
    },
    /// Run the finite-difference gradient suite.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
    },
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen_data(cfg: &RunConfig, split: Split, count: Option<usize>) -> Result<()> {
    let count = count.unwrap_or(match split {
        Split::Train => cfg.data.n_train,
        Split::Eval => cfg.data.n_eval,
    });
    let out = &cfg.output_dir;
    for i in 0..count {
        let s = prepare_scene(cfg, cfg.scene_seed(split, i))?;
        let dir = out.join(format!("scene_{i:04}"));
        mkdir(&dir)?;
        s.scene.save(&dir.join("scene.bin"))?;
        s.scene.gt_occ.save(&dir.join("occupancy.bin"))?;
        s.cloud.save(&dir.join("cloud.bin"))?;
        std::fs::write(dir.join("cloud.csv"), s.cloud.to_csv())?;
        for (v, view) in s.views.iter().enumerate() {
            save_color(&view.gt.image, &dir.join(format!("cam{v}.png")))?;
            let d = &view.gt.depth;
            let depth = coocc::DenseArray::new(vec![d.h, d.w], d.depth.clone())?;
            save_depth(
                &depth,
                Some(&d.mask),
                DEFAULT_METERS_PER_UNIT,
                &dir.join(format!("cam{v}_depth.pgm")),
            )?;
        }
    }
    cfg.save(&out.join("config.toml"))?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn eval_scene(cfg: &RunConfig, index: usize) -> Result<coocc::pipeline::PreparedScene> {
    Ok(prepare_scene(cfg, cfg.scene_seed(Split::Eval, index))?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            split,
            count,
        } => gen_data(&common.config()?, split.into(), count),
        Command::Train { common } => {
            let cfg = common.config()?;
            let out = train(&cfg)?;
            if let Some(last) = out.log.epochs.last() {
                print!("epoch {} loss {:.6}", last.epoch, last.mean.total);
                if let Some((iou, miou)) = last.metrics {
                    print!(" IoU {:.4} mIoU {:.4}", iou, miou);
                }
                println!();
            }
            if let Some(p) = out.checkpoint {
                println!("checkpoint {}", p.display());
            }
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.config()?;
            let model = Model::load(&cfg, &checkpoint)?;
            let scenes = prepare_split(&cfg, Split::Eval, cfg.data.n_eval)?;
            let ev = evaluate(&cfg, &model, &scenes)?;
            print!("{}", ev.report.pretty());
            if common.out.is_some() {
                mkdir(&cfg.output_dir)?;
                let path = cfg.output_dir.join("metrics.csv");
                std::fs::write(&path, ev.report.to_csv())?;
                println!("metrics {}", path.display());
            }
            Ok(())
        }
        Command::Render {
            common,
            checkpoint,
            scene,
        } => {
            let mut cfg = common.config()?;
            if cfg.branch == Branch::LidarOnly {
                bail!("render needs camera views; the lidar branch has none");
            }
            cfg.use_rc = true;
            cfg.use_rd = true;
            let model = Model::load(&cfg, &checkpoint)?;
            let input = eval_scene(&cfg, scene)?;
            let fwd = forward_pipeline(&input, &model, &cfg, ForwardOptions::training())?;
            mkdir(&cfg.output_dir)?;
            for (v, r) in fwd.rendered.iter().enumerate() {
                save_color(
                    &r.color_up,
                    &cfg.output_dir.join(format!("render_cam{v}.png")),
                )?;
                save_depth(
                    &r.depth_up,
                    None,
                    DEFAULT_METERS_PER_UNIT,
                    &cfg.output_dir.join(format!("render_cam{v}_depth.pgm")),
                )?;
            }
            println!(
                "rendered {} views to {}",
                fwd.rendered.len(),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::ExportPly {
            common,
            checkpoint,
            scene,
        } => {
            let cfg = common.config()?;
            let input = eval_scene(&cfg, scene)?;
            mkdir(&cfg.output_dir)?;
            let path = cfg.output_dir.join(format!("scene_{scene:04}.ply"));
            let n = match checkpoint {
                Some(ck) => {
                    let model = Model::load(&cfg, &ck)?;
                    let pred = forward_pipeline(&input, &model, &cfg, ForwardOptions::inference())?
                        .prediction()?;
                    write_ply(&path, &pred, None)?;
                    pred.occupied_count()
                }
                None => {
                    write_ply(&path, &input.scene.gt_occ, Some(&input.scene.gt_color))?;
                    input.scene.gt_occ.occupied_count()
                }
            };
            println!("{n} vertices -> {}", path.display());
            Ok(())
        }
        Command::Ablate {
            common,
            seeds,
            suite,
        } => {
            let cfg = if suite {
                common.config_or(suite_config())?
            } else {
                common.config()?
            };
            let first = common.seed.unwrap_or(0);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            let table = run_ablation(&cfg, &seeds)?;
            mkdir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("ablation.csv");
            std::fs::write(&path, table.to_csv())?;
            print!("{}", table.pretty());
            println!("table {}", path.display());
            Ok(())
        }
        Command::GradCheck { seeds, base_seed } => {
            let outcomes = gradient_suite(seeds, base_seed)?;
            print!("{}", format_outcomes(&outcomes));
            require_all(&outcomes)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
