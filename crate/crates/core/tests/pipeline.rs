//! End-to-end training, evaluation and I/O on small toy suites.

use std::path::Path;

use coocc::losses::Branch;
use coocc::pipeline::{
    prepare_split, suite_loss, train, train_on, ForwardOptions, Model, RunConfig, Split,
};
use coocc::Error;

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.n_train = 4;
    cfg.data.n_eval = 2;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = small(&dir.path().join("a"));
    let mut b = a.clone();
    b.output_dir = dir.path().join("b");
    train(&a).unwrap();
    train(&b).unwrap();
    for f in [
        "train_log.csv",
        "epoch_metrics.csv",
        "model.ckpt",
        "checkpoints/epoch_001.ckpt",
        "config.toml",
    ] {
        let (x, y) = (read(&a.output_dir.join(f)), read(&b.output_dir.join(f)));
        if f == "config.toml" {
            assert_ne!(x, y, "output directories differ");
        } else {
            assert_eq!(x, y, "{f}");
        }
    }
}

#[test]
fn thread_count_is_part_of_the_contract_but_results_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut one = small(dir.path());
    one.epochs = 1;
    let mut two = one.clone();
    two.threads = 2;
    let train_set = prepare_split(&one, Split::Train, 4).unwrap();
    let a = train_on(&one, &train_set, &[], None).unwrap();
    let b = train_on(&two, &train_set, &[], None).unwrap();
    assert_eq!(a.log.steps_csv(), b.log.steps_csv());
    assert_eq!(a.model, b.model);
}

#[test]
fn zero_epochs_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.epochs = 0;
    let out = train(&cfg).unwrap();
    assert!(out.log.steps.is_empty());
    let names: Vec<String> = std::fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["epoch_000.ckpt".to_string()]);
    let initial = Model::load(&cfg, &dir.path().join("checkpoints/epoch_000.ckpt")).unwrap();
    let mut fresh = Model::init(&cfg).unwrap();
    fresh.round_to_f32();
    assert_eq!(initial, fresh);
}

#[test]
fn checkpoint_round_trip_and_architecture_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let mut model = Model::init(&cfg).unwrap();
    model.round_to_f32();
    let p = dir.path().join("m.ckpt");
    model.save(&p).unwrap();
    assert_eq!(Model::load(&cfg, &p).unwrap(), model);
    let bytes = read(&p);
    Model::load(&cfg, &p).unwrap().save(&p).unwrap();
    assert_eq!(read(&p), bytes);
    let mut other = cfg.clone();
    other.channels = 8;
    assert!(matches!(Model::load(&other, &p), Err(Error::Version(_))));
}

/// Seeded check: the mean training loss after one epoch is below the initial one.
#[test]
fn first_epoch_decreases_the_loss_for_every_branch() {
    let mut cfg = RunConfig::default();
    cfg.data.n_train = 8;
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.eval_every = 0;
    let train_set = prepare_split(&cfg, Split::Train, 8).unwrap();
    for branch in [Branch::LidarCamera, Branch::LidarOnly, Branch::CameraOnly] {
        let mut c = cfg.clone();
        c.branch = branch;
        let before = suite_loss(&c, &Model::init(&c).unwrap(), &train_set)
            .unwrap()
            .total;
        let out = train_on(&c, &train_set, &[], None).unwrap();
        let after = suite_loss(&c, &out.model, &train_set).unwrap().total;
        assert!(after < before, "{branch}: {before} -> {after}");
    }
}

#[test]
fn training_mode_and_inference_agree_on_occupancy() {
    let cfg = RunConfig::default();
    let scene = coocc::pipeline::prepare_scene(&cfg, 11).unwrap();
    let model = Model::init(&cfg).unwrap();
    let t = coocc::pipeline::forward_pipeline(&scene, &model, &cfg, ForwardOptions::training())
        .unwrap();
    let i = coocc::pipeline::forward_pipeline(&scene, &model, &cfg, ForwardOptions::inference())
        .unwrap();
    assert_eq!(t.logits, i.logits);
    assert!(i.rendered.is_empty() && !t.rendered.is_empty());
    assert!(t.report.total.is_finite());
}

#[test]
fn logs_have_monotone_steps_and_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let out = train(&cfg).unwrap();
    assert!(out.log.steps.windows(2).all(|w| w[1].step == w[0].step + 1));
    assert_eq!(out.log.steps.len(), 4);
    let csv = String::from_utf8(read(&dir.path().join("epoch_metrics.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + cfg.epochs);
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let miou: f64 = rec.get(rec.len() - 1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&miou));
    }
}

#[test]
fn bad_config_is_rejected() {
    let mut cfg = RunConfig::default();
    cfg.k = 0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert!(RunConfig::from_toml_str("no_such_field = 3").is_err());
    let text = RunConfig::default().to_toml();
    assert_eq!(
        RunConfig::from_toml_str(&text).unwrap(),
        RunConfig::default()
    );
}
