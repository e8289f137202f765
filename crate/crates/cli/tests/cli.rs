use std::path::Path;
use std::process::{Command, Output};

fn footprint(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_footprint"))
        .env("FOOTPRINT_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &str = "\
[synth]
size = 32
min_side = 6
max_side = 10

[data]
window = 32
stride = 32

[train]
epochs = 1

[train.gen]
depth = 3
base_filters = 4

[train.disc]
num_down_layers = 3
base_filters = 4
";

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();

    ok(&footprint(root, &["synth", "--config", cfg, "--n-scenes", "8"]));
    let scenes = root.join("scenes");
    assert_eq!(std::fs::read_dir(&scenes).unwrap().count(), 24);

    let summary = ok(&footprint(root, &["prepare", "--config", cfg, "--scenes", scenes.to_str().unwrap()]));
    assert!(summary.contains("8 patches from 8 scenes"), "{summary}");
    assert!(summary.contains("train 5, val 3"), "{summary}");
    let manifest = root.join("manifest.csv");
    let data = ["--scenes", scenes.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()];

    let train = ok(&footprint(root, &[&["train", "--config", cfg, "--set", "train.loss.mode=CGAN"][..], &data].concat()));
    let ckpt = train.lines().find_map(|l| l.strip_prefix("checkpoint: ")).expect("checkpoint line").to_string();
    assert!(ckpt.contains("cgan_l2-100_d3_s0_e0001"), "{ckpt}");
    assert!(root.join("train/loss.csv").exists());

    let eval = ok(&footprint(root, &[&["evaluate", "--checkpoint", &ckpt][..], &data].concat()));
    assert!(eval.contains("IoU"), "{eval}");
    assert!(root.join("metrics.csv").exists());

    ok(&footprint(root, &[&["bench", "--checkpoint", &ckpt, "--patches", "2"][..], &data].concat()));
    assert!(root.join("bench.csv").exists());

    let overlay = ok(&footprint(
        root,
        &["infer-overlay", "--checkpoint", &ckpt, "--scenes", scenes.to_str().unwrap(), "--scene-id", "synth_0000"],
    ));
    assert!(overlay.contains("footprint pixels of 1024"), "{overlay}");
    assert!(root.join("overlay.png").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for args in [
        &["synth", "--set", "synth.nope=1"][..],
        &["synth", "--set", "synth.min_side=50"][..],
        &["prepare", "--scenes", "x", "--stride", "0"][..],
    ] {
        let out = footprint(root, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(&footprint(root, &["synth", "--config", cfg, "--n-scenes", "3"]));
    let scenes = root.join("scenes");
    ok(&footprint(root, &["prepare", "--config", cfg, "--scenes", scenes.to_str().unwrap()]));
    let out = footprint(
        root,
        &[
            "train",
            "--config",
            cfg,
            "--set",
            "train.learning_rate=1e30",
            "--scenes",
            scenes.to_str().unwrap(),
            "--manifest",
            root.join("manifest.csv").to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
