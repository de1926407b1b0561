use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tle_core::logits::read_scores;

fn tle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tle")).args(args).output().expect("run tle")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(tle(&[]).status.code(), Some(2));
    assert_eq!(tle(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tle(&["bench", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(tle(&["train", "--data", "x.tlef"]).status.code(), Some(2));
    assert_eq!(tle(&["train", "--data", "x", "--out", "y", "--encoder", "nope"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tlef");
    let out = tle(&["eval", "--model", s(&missing), "--data", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let junk = dir.path().join("junk.tlef");
    std::fs::write(&junk, b"XXXXjunk").unwrap();
    let out = tle(&["train", "--data", s(&junk), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn bench_reports_reference_dimensions() {
    let out = tle(&["bench", "--c", "1024", "--d", "8196", "--reps", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("full bilinear dimension: 1048576"), "{text}");
    assert!(text.contains("compact dimension: 8196"), "{text}");
}

#[test]
fn gradcheck_passes() {
    let out = tle(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 12);
    assert!(!text.contains("FAIL"));
}

#[test]
fn synth_train_eval_fuse_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    for (split, stream, name) in [
        ("train", "spatial", "rgb_train.tlef"),
        ("test", "spatial", "rgb_test.tlef"),
        ("train", "temporal", "flow_train.tlef"),
        ("test", "temporal", "flow_test.tlef"),
    ] {
        let seed = if stream == "spatial" { "1" } else { "2" };
        let out = tle(&["synth", "--out", s(&p(name)), "--split", split, "--stream", stream, "--seed", seed, "--difficulty", "2"]);
        assert_eq!(out.status.code(), Some(0));
    }

    let config = p("run.cfg");
    std::fs::write(&config, "# quick run\nencoder = tensor_sketch\nsketch_dim = 64\nmax_iters = 300\nlr_step = 150\n").unwrap();
    for stream in ["rgb", "flow"] {
        let out = tle(&[
            "train",
            "--data",
            s(&p(&format!("{stream}_train.tlef"))),
            "--config",
            s(&config),
            "--set",
            "seed=4",
            "--out",
            s(&p(&format!("{stream}.tlem"))),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let out = tle(&[
            "eval",
            "--model",
            s(&p(&format!("{stream}.tlem"))),
            "--data",
            s(&p(&format!("{stream}_test.tlef"))),
            "--logits",
            s(&p(&format!("{stream}.csv"))),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let text = stdout(&out);
        assert!(text.contains("class_4"), "{text}");
        assert_eq!(read_scores(p(&format!("{stream}.csv"))).unwrap().len(), 100);
    }

    let out = tle(&["fuse", "--spatial", s(&p("rgb.csv")), "--temporal", s(&p("flow.csv")), "--out", s(&p("fused.csv"))]);
    // Both streams name their videos identically, so rows pair up by id.
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("fused accuracy"));
}

#[test]
fn eval_of_untrained_model_is_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tlef");
    let model = dir.path().join("m.tlem");
    assert_eq!(tle(&["synth", "--out", s(&data), "--split", "test"]).status.code(), Some(0));
    let out = tle(&["train", "--data", s(&data), "--out", s(&model), "--stop-after", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let out = tle(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("accuracy 0.2000"), "{}", stdout(&out));

    let three = dir.path().join("three.tlef");
    assert_eq!(tle(&["synth", "--out", s(&three), "--classes", "3"]).status.code(), Some(0));
    let out = tle(&["eval", "--model", s(&model), "--data", s(&three)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn resume_appends_to_log_and_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    assert_eq!(tle(&["synth", "--out", s(&p("d.tlef"))]).status.code(), Some(0));
    let common = ["--sketch-dim", "64", "--max-iters", "60", "--set", "lr_step=20"];
    let data = p("d.tlef");
    let run = |extra: &[&str]| {
        let mut args = vec!["train", "--data", s(&data)];
        args.extend(common);
        args.extend(extra);
        let out = tle(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["--out", s(&p("straight.tlem"))]);
    run(&["--out", s(&p("half.tlem")), "--log", s(&p("log.csv")), "--stop-after", "25"]);
    run(&["--out", s(&p("resumed.tlem")), "--log", s(&p("log.csv")), "--resume", s(&p("half.tlem"))]);
    assert_eq!(std::fs::read(p("straight.tlem")).unwrap(), std::fs::read(p("resumed.tlem")).unwrap());

    let log = std::fs::read_to_string(p("log.csv")).unwrap();
    let iters: Vec<u64> = log
        .lines()
        .filter(|l| l.split(',').count() == 4)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(iters, (0..60).collect::<Vec<_>>());
}

#[test]
fn fuse_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("fused.csv");
    let out = tle(&[
        "fuse",
        "--spatial",
        s(&fixture("spatial_scores.csv")),
        "--temporal",
        s(&fixture("temporal_scores.csv")),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("spatial accuracy 0.6667"), "{text}");
    assert!(text.contains("temporal accuracy 0.6667"), "{text}");
    assert!(text.contains("fused accuracy 0.8333"), "{text}");
    assert_eq!(read_scores(&out_path).unwrap(), read_scores(fixture("fused_expected.csv")).unwrap());
}
