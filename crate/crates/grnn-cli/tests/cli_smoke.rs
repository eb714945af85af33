//! End-to-end smoke tests of the `grnn` binary.

use std::path::Path;
use std::process::Command;

fn grnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grnn"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn grnn");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn synth_then_full_run_and_stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");

    run_ok(grnn()
        .arg("synth")
        .args(["--height", "32", "--width", "32", "--bands", "12"])
        .args(["--classes", "4", "--label-fraction", "0.03", "--seed", "1"])
        .arg("--out")
        .arg(&scene));
    for name in ["cube.json", "cube.raw", "labels_sparse.csv", "labels_truth.csv"] {
        assert!(scene.join(name).exists(), "{name} missing");
    }

    // individual stages
    let reduced = dir.path().join("reduced.json");
    run_ok(grnn()
        .arg("preprocess")
        .arg("--cube")
        .arg(scene.join("cube.json"))
        .arg("--out")
        .arg(&reduced));

    let seg = dir.path().join("seg.json");
    let overlay = dir.path().join("seg.ppm");
    run_ok(grnn()
        .arg("segment")
        .arg("--reduced")
        .arg(&reduced)
        .args(["--n-superpixels", "50"])
        .arg("--out")
        .arg(&seg)
        .arg("--overlay")
        .arg(&overlay));
    assert!(overlay.exists());

    let graph = dir.path().join("graph.json");
    run_ok(grnn()
        .arg("graph")
        .arg("--reduced")
        .arg(&reduced)
        .arg("--seg")
        .arg(&seg)
        .args(["--sigma-spectral", "0.2"])
        .arg("--out")
        .arg(&graph)
        .arg("--edges")
        .arg(dir.path().join("edges.txt")));

    let model = dir.path().join("model.json");
    run_ok(grnn()
        .arg("train")
        .arg("--reduced")
        .arg(&reduced)
        .arg("--seg")
        .arg(&seg)
        .arg("--graph")
        .arg(&graph)
        .arg("--labels")
        .arg(scene.join("labels_sparse.csv"))
        .args(["--n-iter", "30", "--hidden1", "16", "--hidden2", "12"])
        .arg("--out")
        .arg(&model)
        .arg("--history")
        .arg(dir.path().join("history.csv")));

    let map = dir.path().join("map.json");
    run_ok(grnn()
        .arg("classify")
        .arg("--model")
        .arg(&model)
        .arg("--reduced")
        .arg(&reduced)
        .arg("--seg")
        .arg(&seg)
        .arg("--graph")
        .arg(&graph)
        .arg("--labels")
        .arg(scene.join("labels_sparse.csv"))
        .arg("--out")
        .arg(&map));
    assert!(dir.path().join("map.ppm").exists());

    let eval_out = run_ok(grnn()
        .arg("eval")
        .arg("--map")
        .arg(&map)
        .arg("--truth")
        .arg(scene.join("labels_truth.csv"))
        .arg("--out")
        .arg(dir.path().join("report.json")));
    assert!(eval_out.contains("OA"), "{eval_out}");

    // full pipeline via config file, sequential workers
    let config = dir.path().join("config.json");
    let mut cfg = grnn::PipelineConfig::synth_desk();
    cfg.cube = scene.join("cube.json");
    cfg.labels = scene.join("labels_sparse.csv");
    cfg.eval_labels = Some(scene.join("labels_truth.csv"));
    cfg.slic.n_superpixels = 50;
    cfg.train.n_iter = 30;
    cfg.train.hidden1 = 16;
    cfg.train.hidden2 = 12;
    cfg.save(&config).unwrap();

    let run_dir = dir.path().join("run");
    let out = run_ok(grnn()
        .args(["--threads", "1"])
        .arg("run")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&run_dir));
    assert!(out.contains("OA ="), "{out}");
    for name in ["map.ppm", "report.json", "manifest.json", "history.csv"] {
        assert!(run_dir.join(name).exists(), "{name} missing");
    }

    // rerun from the manifest reproduces the report bytes
    let run_dir2 = dir.path().join("run2");
    run_ok(grnn()
        .args(["--threads", "1"])
        .arg("run")
        .arg("--manifest")
        .arg(run_dir.join("manifest.json"))
        .arg("--out")
        .arg(&run_dir2));
    let r1 = std::fs::read(run_dir.join("report.json")).unwrap();
    let r2 = std::fs::read(run_dir2.join("report.json")).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn trials_subcommand_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    run_ok(grnn()
        .arg("synth")
        .args(["--height", "24", "--width", "24", "--bands", "8"])
        .args(["--classes", "3", "--label-fraction", "0.05", "--seed", "2"])
        .arg("--out")
        .arg(&scene));

    let config = dir.path().join("config.json");
    let mut cfg = grnn::PipelineConfig::synth_desk();
    cfg.cube = scene.join("cube.json");
    cfg.labels = scene.join("labels_sparse.csv");
    cfg.eval_labels = Some(scene.join("labels_truth.csv"));
    cfg.slic.n_superpixels = 30;
    cfg.train.n_iter = 20;
    cfg.train.hidden1 = 12;
    cfg.train.hidden2 = 8;
    cfg.save(&config).unwrap();

    let out_dir = dir.path().join("trials");
    let out = run_ok(grnn()
        .arg("trials")
        .arg("--config")
        .arg(&config)
        .args(["--n-trials", "2", "--base-seed", "9"])
        .arg("--out")
        .arg(&out_dir));
    assert!(out.contains("+-"), "{out}");
    assert!(out_dir.join("trials.json").exists());
}

#[test]
fn env_var_overrides_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let mut cmd = grnn();
    cmd.env("GRNN_OUT_DIR", &out)
        .arg("synth")
        .args(["--height", "8", "--width", "8", "--bands", "4", "--classes", "2"]);
    run_ok(&mut cmd);
    assert!(out.join("cube.json").exists());
    let _ = Path::new("");
}
