//! End-to-end runs of the compiled binary: the full command chain, exit
//! codes, deterministic reruns, and partial-output cleanup.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kinecast::boundary_file::{load_boundary, load_proximity, load_surface_csv};
use kinecast::eval_file::{load_eval_csv, load_forecast, save_forecast, ForecastFile};
use kinecast::motion_file::{load_manifest, load_motion, save_motion, save_motion_csv};
use kinecast::sample_file::load_samples;
use kinecast_core::ensemble::EnsembleSpec;
use kinecast_core::motion::{KinematicTree, MotionSequence, NodeKind, TreeNode};
use kinecast_core::rng::RngStream;
use kinecast_core::Tensor;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kinecast")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should spawn")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kinecast_pipeline_{name}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// A configuration small enough that training takes a couple of seconds.
fn micro_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 3,
        "data": {
            "preset": "chain:2",
            "trajectories": 6,
            "frames": 24,
            "fps": 25.0,
            "split": [0.5, 0.25, 0.25],
            "stride": 2
        },
        "model": {
            "history": 6,
            "horizon": 4,
            "joints": 2,
            "hidden": 8,
            "heads": 2,
            "dilations": [1, 2],
            "kernel": 2
        },
        "train": {"max_epochs": 3, "batch_size": 8, "patience": 10},
        "ensemble": {"members": 2},
        "sampling": {"draws": 3, "rate": 0.2},
        "boundary": {"alpha": 0.05, "resolution": 4}
    });
    let path = dir.join("cfg.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// A two-segment robot hovering near the workspace, `frames` frames long.
fn robot_file(dir: &Path, frames: usize) -> PathBuf {
    let tree = KinematicTree::new(
        vec![
            TreeNode { name: "marker".into(), kind: NodeKind::Human },
            TreeNode { name: "base".into(), kind: NodeKind::Robot },
            TreeNode { name: "elbow".into(), kind: NodeKind::Robot },
            TreeNode { name: "tip".into(), kind: NodeKind::Robot },
        ],
        vec![(1, 2), (2, 3)],
    )
    .unwrap();
    let frame = vec![
        [0.0, 0.0, 0.0],
        [1200.0, 0.0, 0.0],
        [1200.0, 200.0, 0.0],
        [1100.0, 300.0, 100.0],
    ];
    let seq = MotionSequence::new(tree, 25.0, vec![frame; frames]).unwrap();
    let path = dir.join("robot.json");
    save_motion(&path, &seq).unwrap();
    path
}

#[test]
fn full_chain_produces_consistent_artifacts() {
    let dir = workdir("full_chain");
    micro_config(&dir);

    assert_ok(&run_in(&dir, &["synth", "--config", "cfg.json"]));
    let names = load_manifest(&dir.join("data/manifest.json")).unwrap();
    assert_eq!(names.len(), 6);
    let first = load_motion(&dir.join("data").join(&names[0])).unwrap();
    assert_eq!(first.len(), 24);
    assert_eq!(first.tree.human_nodes().len(), 2);

    assert_ok(&run_in(&dir, &["train", "--config", "cfg.json"]));
    let seeds = EnsembleSpec::from_base(2, 3).unwrap().seeds().to_vec();
    for seed in &seeds {
        assert!(dir.join(format!("models/model_{seed}.json")).exists());
        assert!(dir.join(format!("models/train_log_{seed}.csv")).exists());
    }

    let window = format!("data/{}", names[0]);
    assert_ok(&run_in(&dir, &["predict", "--config", "cfg.json", "--window", &window, "--out", "fc"]));
    let forecast = load_forecast(&dir.join("fc/forecast.json")).unwrap();
    assert_eq!(forecast.data.shape(), [4, 2, 3]);
    assert_eq!(forecast.fps, 25.0);
    // Window ends one horizon before the trailing frames: 24 - 6 - 4 = 14.
    assert!(forecast.window_id.ends_with("@14"), "{}", forecast.window_id);

    assert_ok(&run_in(&dir, &["sample", "--config", "cfg.json", "--window", &window, "--out", "sm"]));
    let samples = load_samples(&dir.join("sm/samples.json")).unwrap();
    assert_eq!(samples.set.samples.len(), 6);
    assert_eq!(samples.set.member_of, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(samples.set.dropout_rate, 0.2);

    assert_ok(&run_in(
        &dir,
        &["boundary", "--config", "cfg.json", "--samples", "sm/samples.json", "--out", "bd"],
    ));
    let frames = load_boundary(&dir.join("bd/boundary.json")).unwrap();
    assert_eq!(frames.len(), 4);
    assert_eq!(frames[0].joints.len(), 2);
    assert_eq!(frames[0].segments.len(), 1);
    assert_eq!(frames[0].alpha, 0.05);
    let surface = load_surface_csv(&dir.join("bd/boundary_surface.csv")).unwrap();
    assert!(surface.iter().any(|(f, e, _)| *f == 3 && e == "segment:0"));

    robot_file(&dir, 4);
    assert_ok(&run_in(
        &dir,
        &[
            "proximity",
            "--config",
            "cfg.json",
            "--boundary",
            "bd/boundary.json",
            "--robot",
            "robot.json",
            "--out",
            "px",
        ],
    ));
    let rows = load_proximity(&dir.join("px/proximity.json")).unwrap();
    // 4 frames x 2 robot segments x (2 joints + 1 segment).
    assert_eq!(rows.len(), 4 * 2 * 3);
    assert!(rows.iter().all(|r| r.resolution == 4));
    // The robot stays far away in this scene.
    assert!(rows.iter().all(|r| !r.violation && r.clearance_mm > 0.0));

    assert_ok(&run_in(
        &dir,
        &[
            "eval",
            "--config",
            "cfg.json",
            "--pred",
            "fc/forecast.json",
            "--truth",
            &window,
            "--samples",
            "sm/samples.json",
            "--out",
            "ev",
        ],
    ));
    let rows = load_eval_csv(&dir.join("ev/eval.csv")).unwrap();
    // fps 25, T=4: the 80 and 160 ms horizons survive, longer ones are
    // clipped; then the whole-forecast mean and the diversity row.
    let metrics: Vec<(&str, Option<f64>)> =
        rows.iter().map(|r| (r.metric.as_str(), r.horizon_ms)).collect();
    assert_eq!(
        metrics,
        vec![
            ("mpjpe", Some(80.0)),
            ("mpjpe", Some(160.0)),
            ("mpjpe_mean", None),
            ("apd", None)
        ]
    );
    assert!(rows.iter().all(|r| r.value_mm.is_finite() && r.value_mm >= 0.0));
    let apd_row = rows.iter().find(|r| r.metric == "apd").unwrap();
    assert!(apd_row.value_mm > 0.0);

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reruns_write_byte_identical_artifacts() {
    let dir = workdir("rerun");
    micro_config(&dir);
    let read = |p: &Path| fs::read(p).unwrap();

    assert_ok(&run_in(&dir, &["synth", "--config", "cfg.json", "--out", "a"]));
    assert_ok(&run_in(&dir, &["synth", "--config", "cfg.json", "--out", "b"]));
    for name in load_manifest(&dir.join("a/manifest.json")).unwrap() {
        assert_eq!(read(&dir.join("a").join(&name)), read(&dir.join("b").join(&name)), "{name}");
    }
    assert_eq!(read(&dir.join("a/manifest.json")), read(&dir.join("b/manifest.json")));

    // Train against one of the synthesized datasets, twice.
    assert_ok(&run_in(
        &dir,
        &["train", "--config", "cfg.json", "--set", "io.data_dir=a", "--out", "m1"],
    ));
    assert_ok(&run_in(
        &dir,
        &["train", "--config", "cfg.json", "--set", "io.data_dir=a", "--out", "m2"],
    ));
    for seed in EnsembleSpec::from_base(2, 3).unwrap().seeds() {
        let name = format!("model_{seed}.json");
        assert_eq!(read(&dir.join("m1").join(&name)), read(&dir.join("m2").join(&name)), "{name}");
    }

    let window = "a/traj_0002.json";
    let predict = |out: &str| {
        assert_ok(&run_in(
            &dir,
            &[
                "predict",
                "--config",
                "cfg.json",
                "--set",
                "io.model_dir=m1",
                "--window",
                window,
                "--out",
                out,
            ],
        ));
    };
    predict("p1");
    predict("p2");
    assert_eq!(read(&dir.join("p1/forecast.json")), read(&dir.join("p2/forecast.json")));

    let sample = |out: &str| {
        assert_ok(&run_in(
            &dir,
            &[
                "sample",
                "--config",
                "cfg.json",
                "--set",
                "io.model_dir=m1",
                "--window",
                window,
                "--out",
                out,
            ],
        ));
    };
    sample("s1");
    sample("s2");
    assert_eq!(read(&dir.join("s1/samples.json")), read(&dir.join("s2/samples.json")));

    // A different sampling seed changes the samples.
    assert_ok(&run_in(
        &dir,
        &[
            "sample",
            "--config",
            "cfg.json",
            "--set",
            "io.model_dir=m1",
            "--set",
            "sampling.seed=99",
            "--window",
            window,
            "--out",
            "s3",
        ],
    ));
    assert_ne!(read(&dir.join("s1/samples.json")), read(&dir.join("s3/samples.json")));

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validation_failures_exit_one() {
    let dir = workdir("exit_one");
    micro_config(&dir);

    // Unknown config key, whether in the file or an override.
    fs::write(dir.join("bad.json"), r#"{"trian": {}}"#).unwrap();
    assert_eq!(code(&run_in(&dir, &["synth", "--config", "bad.json"])), 1);
    assert_eq!(
        code(&run_in(&dir, &["synth", "--config", "cfg.json", "--set", "train.lrr=1"])),
        1
    );
    // Missing files.
    assert_eq!(code(&run_in(&dir, &["synth", "--config", "nope.json"])), 1);
    assert_eq!(code(&run_in(&dir, &["train", "--config", "cfg.json"])), 1);
    assert_eq!(
        code(&run_in(&dir, &["eval", "--pred", "nope.json", "--truth", "nope.json"])),
        1
    );
    // Usage errors from the argument parser.
    assert_eq!(code(&run_in(&dir, &["frobnicate"])), 1);
    assert_eq!(code(&run_in(&dir, &["predict", "--window"])), 1);
    // Help is not a failure.
    assert_eq!(code(&run_in(&dir, &["--help"])), 0);

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn numeric_failures_exit_two() {
    let dir = workdir("exit_two");
    micro_config(&dir);
    assert_ok(&run_in(&dir, &["synth", "--config", "cfg.json"]));
    let out = run_in(
        &dir,
        &["train", "--config", "cfg.json", "--set", "train.lr=1e200", "--set", "train.batch_size=4"],
    );
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    // Nothing was written for the failed run.
    assert!(!dir.join("models").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn failed_command_removes_partial_outputs() {
    let dir = workdir("cleanup");
    micro_config(&dir);
    assert_ok(&run_in(&dir, &["synth", "--config", "cfg.json"]));
    assert_ok(&run_in(&dir, &["train", "--config", "cfg.json"]));
    assert_ok(&run_in(
        &dir,
        &["sample", "--config", "cfg.json", "--window", "data/traj_0000.json", "--out", "sm"],
    ));
    // Obstruct the second output file: the boundary JSON gets written first,
    // the surface CSV fails, and the command must take the JSON back out.
    let out_dir = dir.join("bd");
    fs::create_dir_all(out_dir.join("boundary_surface.csv")).unwrap();
    let out = run_in(
        &dir,
        &["boundary", "--config", "cfg.json", "--samples", "sm/samples.json", "--out", "bd"],
    );
    assert_eq!(code(&out), 1);
    assert!(!out_dir.join("boundary.json").exists(), "partial output left behind");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn synth_with_zero_trajectories_writes_an_empty_manifest() {
    let dir = workdir("empty_synth");
    micro_config(&dir);
    assert_ok(&run_in(
        &dir,
        &["synth", "--config", "cfg.json", "--set", "data.trajectories=0"],
    ));
    assert!(load_manifest(&dir.join("data/manifest.json")).unwrap().is_empty());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn eval_of_a_forecast_against_itself_is_all_zeros() {
    let dir = workdir("eval_zero");
    let mut rng = RngStream::new(8, 1);
    let f = ForecastFile {
        window_id: "w@0".into(),
        fps: 25.0,
        data: Tensor::uniform(&[5, 3, 3], -50.0, 50.0, &mut rng),
    };
    save_forecast(&dir.join("fc.json"), &f).unwrap();
    assert_ok(&run_in(&dir, &["eval", "--pred", "fc.json", "--truth", "fc.json", "--out", "ev"]));
    let rows = load_eval_csv(&dir.join("ev/eval.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.value_mm == 0.0), "{rows:?}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn csv_trajectories_load_like_json_ones() {
    let dir = workdir("csv_window");
    micro_config(&dir);
    assert_ok(&run_in(&dir, &["synth", "--config", "cfg.json"]));
    assert_ok(&run_in(&dir, &["train", "--config", "cfg.json"]));
    let seq = load_motion(&dir.join("data/traj_0001.json")).unwrap();
    save_motion_csv(&dir.join("win.csv"), &seq).unwrap();

    let predict = |window: &str, out: &str| {
        assert_ok(&run_in(
            &dir,
            &["predict", "--config", "cfg.json", "--window", window, "--out", out],
        ));
    };
    predict("data/traj_0001.json", "pj");
    predict("win.csv", "pc");
    let a = load_forecast(&dir.join("pj/forecast.json")).unwrap();
    let b = load_forecast(&dir.join("pc/forecast.json")).unwrap();
    for (x, y) in a.data.data().iter().zip(b.data.data()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    fs::remove_dir_all(&dir).unwrap();
}
