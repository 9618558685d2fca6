//! End-to-end tests through the `semg` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn semg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semg"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn semg");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn semg");
    (
        out.status.code().unwrap_or(-1),
        format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

/// Small scenario configuration shared by every CLI test.
fn write_mini_config(dir: &Path) -> PathBuf {
    let path = dir.join("mini.conf");
    std::fs::write(
        &path,
        "\
seed = 7
sim.n_mus = 12
sim.recruited_at_max = 6
sim.mean_total_fibers = 6000
sim.grid_rows = 5
sim.grid_cols = 5
sim.noise_levels = none
sim.repetitions = 1
extend.k = 8
apfp.max_sources = 16
apfp.restarts = 2
apfp.max_rounds = 3
apfp.xi_min = 0.35
",
    )
    .unwrap();
    path
}

struct Fixture {
    root: PathBuf,
    config: PathBuf,
    recording: PathBuf,
    truth: PathBuf,
    decomposed: PathBuf,
    bank: PathBuf,
}

/// Simulate + decompose + bank once; everything downstream reuses it.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("semg-cli-fixture-{}", std::process::id()));
        std::fs::create_dir_all(&root).unwrap();
        let config = write_mini_config(&root);
        let sim_dir = root.join("sim");
        run_ok(
            semg()
                .args(["simulate", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&sim_dir),
        );
        let recording = sim_dir.join("recording_none_rep0.semg");
        let truth = sim_dir.join("truth_rep0.txt");
        assert!(recording.exists() && truth.exists());

        let decomposed = root.join("decomp");
        run_ok(
            semg()
                .arg("decompose-offline")
                .arg(&recording)
                .args(["--config"])
                .arg(&config)
                .arg("--out")
                .arg(&decomposed),
        );

        let bank = root.join("bank.mubk");
        run_ok(
            semg()
                .args(["bank", "build"])
                .arg(&decomposed)
                .args(["--config"])
                .arg(&config)
                .arg("--out")
                .arg(&bank),
        );
        Fixture {
            root,
            config,
            recording,
            truth,
            decomposed,
            bank,
        }
    })
}

#[test]
fn simulate_grid_writes_expected_files_and_manifest() {
    let dir = std::env::temp_dir().join(format!("semg-grid-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_mini_config(&dir);
    let out_dir = dir.join("grid");
    run_ok(
        semg()
            .args(["simulate", "--config"])
            .arg(&config)
            .args(["--set", "sim.noise_levels=none,20"])
            .args(["--set", "sim.repetitions=3"])
            .arg("--out")
            .arg(&out_dir),
    );
    let recordings: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(Result::ok)
        .filter(|e| e.file_name().to_string_lossy().starts_with("recording_"))
        .collect();
    assert_eq!(recordings.len(), 6, "2 noise levels x 3 repetitions");
    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(
        manifest.lines().count(),
        1 + 1 + 3 + 6,
        "header + templates + truths + recordings"
    );
}

#[test]
fn simulate_zero_repetitions_writes_manifest_only() {
    let dir = std::env::temp_dir().join(format!("semg-zero-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_mini_config(&dir);
    let out_dir = dir.join("out");
    run_ok(
        semg()
            .args(["simulate", "--config"])
            .arg(&config)
            .args(["--set", "sim.repetitions=0"])
            .arg("--out")
            .arg(&out_dir),
    );
    assert!(out_dir.join("manifest.csv").exists());
    let recordings = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(Result::ok)
        .filter(|e| e.file_name().to_string_lossy().starts_with("recording_"))
        .count();
    assert_eq!(recordings, 0);
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = std::env::temp_dir().join(format!("semg-det-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_mini_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        run_ok(
            semg()
                .args(["simulate", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(out),
        );
    }
    let a = std::fs::read(out_a.join("recording_none_rep0.semg")).unwrap();
    let b = std::fs::read(out_b.join("recording_none_rep0.semg")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decompose_smoke_accepts_units_and_logs_rounds() {
    let fx = fixture();
    let trains = std::fs::read_to_string(fx.decomposed.join("trains.txt")).unwrap();
    assert!(trains.lines().filter(|l| !l.starts_with('#')).count() > 0);
    let log = std::fs::read_to_string(fx.decomposed.join("log.txt")).unwrap();
    assert!(log.contains("accepted motor units:"));
    assert!(fx.decomposed.join("templates.semt").exists());
    assert!(fx.decomposed.join("vectors.mubk").exists());
}

#[test]
fn decompose_max_rounds_flag_limits_rounds() {
    let fx = fixture();
    let out = fx.root.join("decomp-r1");
    run_ok(
        semg()
            .arg("decompose-offline")
            .arg(&fx.recording)
            .args(["--config"])
            .arg(&fx.config)
            .args(["--max-rounds", "1"])
            .arg("--out")
            .arg(&out),
    );
    let log = std::fs::read_to_string(out.join("log.txt")).unwrap();
    let rounds = log.lines().filter(|l| l.starts_with("round ")).count();
    assert_eq!(rounds, 1, "log:\n{log}");
}

#[test]
fn corrupt_recording_fails_cleanly_naming_the_file() {
    let fx = fixture();
    let bad = fx.root.join("corrupt.semg");
    std::fs::write(&bad, b"GARBAGE FILE CONTENT").unwrap();
    let (code, msg) = exit_code(
        semg()
            .arg("decompose-offline")
            .arg(&bad)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--out")
            .arg(fx.root.join("never")),
    );
    assert_eq!(code, 2, "{msg}");
    assert!(msg.contains("corrupt.semg"), "{msg}");
}

#[test]
fn stream_replay_emits_latency_rows_per_window() {
    let fx = fixture();
    let out = fx.root.join("stream");
    run_ok(
        semg()
            .arg("stream")
            .arg(&fx.recording)
            .arg("--bank")
            .arg(&fx.bank)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--offline-replay")
            .arg("--out")
            .arg(&out),
    );
    let latency = std::fs::read_to_string(out.join("latency.csv")).unwrap();
    // 5 s at 2 kHz, 1 s window, 0.2 s increment: 21 windows + header.
    assert_eq!(latency.lines().count(), 22);
    assert!(out.join("trains.txt").exists());
    assert!(std::fs::read_to_string(out.join("summary.txt"))
        .unwrap()
        .contains("windows: 21"));
}

#[test]
fn stream_realtime_paces_replay() {
    let fx = fixture();
    let out = fx.root.join("stream-rt");
    let start = std::time::Instant::now();
    run_ok(
        semg()
            .arg("stream")
            .arg(&fx.recording)
            .arg("--bank")
            .arg(&fx.bank)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--realtime")
            .arg("--out")
            .arg(&out),
    );
    // Replaying 5 s of data at the native rate takes at least ~4 s of wall
    // time (the last window is due at stream time 5.0 s minus one increment).
    assert!(
        start.elapsed().as_secs_f64() >= 4.0,
        "took {:?}",
        start.elapsed()
    );
}

#[test]
fn stream_rejects_mismatched_channel_count() {
    let fx = fixture();
    // The bank was built from a 5x5 recording; a 4x4 stream cannot satisfy
    // channels × K = bank dimension.
    let sim_dir = fx.root.join("sim-4x4");
    run_ok(
        semg()
            .args(["simulate", "--config"])
            .arg(&fx.config)
            .args(["--set", "sim.grid_rows=4"])
            .args(["--set", "sim.grid_cols=4"])
            .args(["--set", "sim.n_mus=8"])
            .args(["--set", "sim.recruited_at_max=4"])
            .arg("--out")
            .arg(&sim_dir),
    );
    let out = fx.root.join("stream-bad");
    let (code, msg) = exit_code(
        semg()
            .arg("stream")
            .arg(sim_dir.join("recording_none_rep0.semg"))
            .arg("--bank")
            .arg(&fx.bank)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(code, 2, "{msg}");
    assert!(msg.contains("mismatch"), "{msg}");
}

#[test]
fn evaluate_self_comparison_is_perfect_and_svg_is_well_formed() {
    let fx = fixture();
    let out = fx.root.join("eval-self");
    run_ok(
        semg()
            .arg("evaluate")
            .arg("--online")
            .arg(&fx.truth)
            .arg("--reference")
            .arg(&fx.truth)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--emit-svg")
            .arg("--out")
            .arg(&out),
    );
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    for line in metrics.lines().skip(1) {
        if line.starts_with("summary") {
            let mr: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
            assert_eq!(mr, 1.0);
        }
    }
    let svg = std::fs::read_to_string(out.join("raster.svg")).unwrap();
    // Minimal well-formedness: XML declaration, balanced svg root.
    assert!(svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<svg").count(), 1);
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn evaluate_stream_against_truth_summarizes() {
    let fx = fixture();
    let stream_out = fx.root.join("stream-eval");
    run_ok(
        semg()
            .arg("stream")
            .arg(&fx.recording)
            .arg("--bank")
            .arg(&fx.bank)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--out")
            .arg(&stream_out),
    );
    let out = fx.root.join("eval-stream");
    run_ok(
        semg()
            .arg("evaluate")
            .arg("--online")
            .arg(stream_out.join("trains.txt"))
            .arg("--reference")
            .arg(&fx.truth)
            .args(["--config"])
            .arg(&fx.config)
            .arg("--recording")
            .arg(&fx.recording)
            .arg("--templates")
            .arg(fx.root.join("sim").join("templates.semt"))
            .arg("--out")
            .arg(&out),
    );
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 3, "{metrics}");

    // report aggregates the metrics file.
    let report_out = fx.root.join("report");
    run_ok(
        semg()
            .arg("report")
            .arg(out.join("metrics.csv"))
            .arg("--out")
            .arg(&report_out),
    );
    assert!(std::fs::read_to_string(report_out.join("report.csv"))
        .unwrap()
        .contains("overall"));
}

#[test]
fn dump_config_round_trips_runs() {
    let fx = fixture();
    let dump = run_ok(
        semg()
            .args(["simulate", "--config"])
            .arg(&fx.config)
            .arg("--dump-config"),
    );
    let dumped_path = fx.root.join("dumped.conf");
    std::fs::write(&dumped_path, &dump.stdout).unwrap();
    let out_a = fx.root.join("roundtrip-a");
    let out_b = fx.root.join("roundtrip-b");
    run_ok(
        semg()
            .args(["simulate", "--config"])
            .arg(&fx.config)
            .arg("--out")
            .arg(&out_a),
    );
    run_ok(
        semg()
            .args(["simulate", "--config"])
            .arg(&dumped_path)
            .arg("--out")
            .arg(&out_b),
    );
    let a = std::fs::read(out_a.join("recording_none_rep0.semg")).unwrap();
    let b = std::fs::read(out_b.join("recording_none_rep0.semg")).unwrap();
    assert_eq!(a, b, "dumped config must reproduce the identical run");
}

#[test]
fn unknown_config_key_is_usage_error() {
    let fx = fixture();
    let bad = fx.root.join("bad.conf");
    std::fs::write(&bad, "sim.bogus_knob = 3\n").unwrap();
    let (code, msg) = exit_code(semg().args(["simulate", "--config"]).arg(&bad));
    assert_eq!(code, 1, "{msg}");
    assert!(msg.contains("bogus_knob"), "{msg}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let (code, _) = exit_code(semg().args(["simulate", "--frobnicate"]));
    assert_eq!(code, 1);
}

#[test]
fn enforce_realtime_violation_exits_with_code_3() {
    let fx = fixture();
    let out = fx.root.join("stream-enforce");
    // A 2-ms increment budget cannot be met when every window costs a few
    // milliseconds of processing; with a 2-s window the violation is
    // certain on any hardware.
    let (code, msg) = exit_code(
        semg()
            .arg("stream")
            .arg(&fx.recording)
            .arg("--bank")
            .arg(&fx.bank)
            .args(["--config"])
            .arg(&fx.config)
            .args(["--set", "online.window_s=2.0"])
            .args(["--set", "online.increment_s=0.002"])
            .arg("--enforce-realtime")
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(code, 3, "{msg}");
    assert!(msg.contains("real-time budget"), "{msg}");
}
