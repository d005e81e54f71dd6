use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cinetrack::cli::{RunManifest, LatencyRecord};

fn cinetrack(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cinetrack"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", "seq", "--size", "64", "--frames", "8"];
    args.extend_from_slice(extra);
    let o = cinetrack(&args, dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn track(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "track",
        "--input",
        "seq",
        "--first-mask",
        "seq/mask_00000.pgm",
        "--output",
        out,
        "--resolution",
        "128",
    ];
    args.extend_from_slice(extra);
    cinetrack(&args, dir)
}

#[test]
fn synth_static_sequence_repeats_frame() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--amplitude", "0", "--noise", "0"]);
    let first = fs::read(dir.path().join("seq/frame_00000.pgm")).unwrap();
    for i in 1..8 {
        assert_eq!(fs::read(dir.path().join(format!("seq/frame_{i:05}.pgm"))).unwrap(), first);
        assert!(dir.path().join(format!("seq/mask_{i:05}.pgm")).exists());
    }
}

#[test]
fn synth_seed_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--amplitude", "3", "--noise", "6", "--seed", "9"];
    synth(a.path(), &args);
    synth(b.path(), &args);
    for i in 0..8 {
        let name = format!("seq/frame_{i:05}.pgm");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
}

#[test]
fn synth_rejects_ellipse_outside_image() {
    let dir = tempfile::tempdir().unwrap();
    let o = cinetrack(&["synth", "--out", "s", "--size", "64", "--frames", "3", "--amplitude", "40"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("leaves"));
}

#[test]
fn track_writes_masks_manifest_and_latency() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--amplitude", "2", "--noise", "4"]);
    let o = track(dir.path(), "out", &["--overlays"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    for i in 0..8 {
        assert!(out.join(format!("mask_{i:05}.pgm")).exists());
        assert!(out.join(format!("overlay_{i:05}.ppm")).exists());
    }
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.frame_count, 8);
    assert_eq!(m.config.k, 5);
    assert_eq!(m.config.latency_budget_s, 1.0);
    assert_eq!(m.config.resolution, (128, 128));
    assert_eq!(m.written_frames, vec![0, 5]);
    assert!(m.finished_unix_s >= m.started_unix_s);
    let lat: Vec<LatencyRecord> = serde_json::from_str(&fs::read_to_string(out.join("latency.json")).unwrap()).unwrap();
    assert_eq!(lat.iter().map(|l| l.frame).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
    assert_eq!(lat, m.latencies);
    // frame 0 is the annotation itself
    assert_eq!(
        fs::read(out.join("mask_00000.pgm")).unwrap(),
        fs::read(dir.path().join("seq/mask_00000.pgm")).unwrap()
    );
}

#[test]
fn track_budget_violation_exits_3_with_masks() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let o = track(dir.path(), "out", &["--budget-s", "1e-9"]);
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("out/mask_00007.pgm").exists());
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn track_invalid_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    assert_eq!(code(&track(dir.path(), "o1", &["--tau", "1.5"])), 1);
    assert_eq!(code(&track(dir.path(), "o2", &["--k", "0"])), 1);
    let o = cinetrack(&["track", "--input", "nowhere", "--first-mask", "m.pgm", "--output", "o3"], dir.path());
    assert_eq!(code(&o), 1);
    fs::write(dir.path().join("seq/mask_00000.pgm"), b"P5\n2 2\n255\n\0\0\0\0").unwrap();
    assert_eq!(code(&track(dir.path(), "o4", &[])), 1);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    fs::write(dir.path().join("cfg.json"), r#"{"k": 2, "capacity": 3, "resolution": [128, 128]}"#).unwrap();
    let o = cinetrack(
        &["track", "--input", "seq", "--first-mask", "seq/mask_00000.pgm", "--output", "out", "--config", "cfg.json", "--capacity", "4"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!((m.config.k, m.config.capacity), (2, 4));
    assert_eq!(m.written_frames, vec![0, 2, 4, 6]);
    assert_eq!(m.memory_high_water, 4);

    fs::write(dir.path().join("bad.json"), r#"{"k": 2, "bogus": 1}"#).unwrap();
    let o = track(dir.path(), "o2", &["--config", "bad.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--amplitude", "2"]);
    let o = cinetrack(&["eval", "--pred", "seq", "--ref", "seq", "--report", "r.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("dsc") && l.contains("1.0000")));
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregates"]["dsc"]["mean"], 1.0);

    fs::create_dir(dir.path().join("few")).unwrap();
    for i in 0..5 {
        let name = format!("mask_{i:05}.pgm");
        fs::copy(dir.path().join("seq").join(&name), dir.path().join("few").join(&name)).unwrap();
    }
    let o = cinetrack(&["eval", "--pred", "few", "--ref", "seq", "--report", "r2.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains('5') && stderr(&o).contains('8'), "{}", stderr(&o));
}

#[test]
fn eval_latency_columns() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--amplitude", "2", "--noise", "4"]);
    assert_eq!(code(&track(dir.path(), "out", &[])), 0);
    let o = cinetrack(
        &["eval", "--pred", "out", "--ref", "seq", "--latency", "out/latency.json", "--report", "r.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| !l.split(',').nth(4).unwrap().is_empty()));

    let o = cinetrack(
        &["eval", "--pred", "out", "--ref", "seq", "--latency", "missing.json", "--report", "r2.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("r2.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(4).unwrap().is_empty()));
}

#[test]
fn replay_reproduces_masks() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--amplitude", "3", "--noise", "5"]);
    assert_eq!(code(&track(dir.path(), "out", &[])), 0);
    let o = cinetrack(&["replay", "--manifest", "out/manifest.json", "--output", "again"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("byte-identical"));
    for i in 0..8 {
        let name = format!("mask_{i:05}.pgm");
        assert_eq!(
            fs::read(dir.path().join("out").join(&name)).unwrap(),
            fs::read(dir.path().join("again").join(&name)).unwrap()
        );
    }
    // the manifest also works as a config file
    let o = track(dir.path(), "third", &["--config", "out/manifest.json"]);
    assert_eq!(code(&o), 0);

    fs::write(dir.path().join("out/mask_00004.pgm"), fs::read(dir.path().join("out/mask_00000.pgm")).unwrap()).unwrap();
    let o = cinetrack(&["replay", "--manifest", "out/manifest.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("differ"));
}

#[test]
fn bench_single_frame_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = cinetrack(&["bench", "--size", "64", "--frames", "1", "--resolution", "128"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("1 frames"));
    assert!(s.contains("memory high-water"));
    assert!(s.contains("p95"));

    let o = cinetrack(
        &["bench", "--size", "64", "--frames", "4", "--resolution", "128", "--budget-s", "1e-9", "--save", "b.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 3);
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(saved["frames"], 4);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cinetrack(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&cinetrack(&["track", "--input", "x"], dir.path())), 1);
    assert_eq!(code(&cinetrack(&["--version"], dir.path())), 0);
}
