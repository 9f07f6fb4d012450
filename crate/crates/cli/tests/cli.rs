use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
epochs = 1
batch_size = 2

[data]
n_train = 2
n_eval = 1
"#;

fn coocc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_coocc"))
        .args(args)
        .output()
        .expect("spawn coocc")
}

fn ok(args: &[&str]) -> String {
    let out = coocc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_render_export_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
    for f in ["train_log.csv", "epoch_metrics.csv", "model.ckpt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let ck = a.join("model.ckpt");
    let ev = dir.path().join("eval");
    let text = ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--seed",
        "7",
        "--checkpoint",
        s(&ck),
        "--out",
        s(&ev),
    ]);
    assert!(text.contains("mIoU"));
    assert!(ev.join("metrics.csv").exists());

    let r = dir.path().join("render");
    ok(&[
        "render",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&r),
    ]);
    assert!(r.join("render_cam0.png").exists() && r.join("render_cam0_depth.pgm").exists());

    let p = dir.path().join("ply");
    let msg = ok(&["export-ply", "--config", s(&cfg), "--out", s(&p)]);
    let n: usize = msg.split_whitespace().next().unwrap().parse().unwrap();
    let ply = std::fs::read_to_string(p.join("scene_0000.ply")).unwrap();
    assert!(ply.contains(&format!("element vertex {n}\n")));
    let body = ply.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), n);
}

#[test]
fn gen_data_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("data");
    ok(&[
        "gen-data",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--count",
        "1",
    ]);
    let scene = out.join("scene_0000");
    for f in [
        "scene.bin",
        "occupancy.bin",
        "cloud.bin",
        "cloud.csv",
        "cam0.png",
        "cam1_depth.pgm",
    ] {
        assert!(scene.join(f).exists(), "{f}");
    }
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "k = 0\n").unwrap();
    let out = coocc(&["train", "--config", s(&bad), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = coocc(&["eval", "--checkpoint", s(&dir.path().join("none.ckpt"))]);
    assert!(!missing.status.success());

    let lidar = coocc(&["render", "--branch", "lidar", "--checkpoint", "x.ckpt"]);
    assert!(!lidar.status.success());
}

#[test]
fn grad_check_passes_on_a_few_seeds() {
    let text = ok(&["grad-check", "--seeds", "2"]);
    assert!(!text.contains("FAIL"));
}
