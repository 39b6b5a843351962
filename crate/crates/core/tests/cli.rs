//! Drives the `motion-prior` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motion-prior"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    for cmd in [
        "train",
        "refine",
        "interpolate",
        "complete",
        "eval",
        "synth",
        "gradcheck",
    ] {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{cmd}");
    }
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["interpolate", "--gap", "3"]).status.code(), Some(2));
    let out = run(&["eval", "/nonexistent/a.bvh", "/nonexistent/b.bvh"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let synth = |n: &str, len: &str| run(&["synth", "--n", "1", "--length", len, "--out", path(&dir.path().join(n))]);
    assert!(synth("a", "8").status.success() && synth("b", "9").status.success());
    let a = dir.path().join("a/clip_000.bvh");
    let out = run(&["eval", path(&a), path(&dir.path().join("b/clip_000.bvh"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn synth_train_interpolate_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let ok = |args: &[&str]| {
        let out = run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };
    ok(&[
        "--seed",
        "2",
        "synth",
        "--n",
        "2",
        "--length",
        "32",
        "--noise",
        "0.05",
        "--out",
        path(&d("synth")),
    ]);
    ok(&[
        "--seed",
        "2",
        "train",
        "--iters",
        "10",
        "--clips",
        "4",
        "--out",
        path(&d("train")),
    ]);
    ok(&[
        "--seed",
        "2",
        "train",
        "--preset",
        "toy-refinement",
        "--iters",
        "10",
        "--clips",
        "4",
        "--out",
        path(&d("ref")),
    ]);
    let ckpt = d("train/model.ckpt");
    let clip = d("synth/clip_000.bvh");
    ok(&[
        "interpolate",
        "--model",
        path(&ckpt),
        "--input",
        path(&clip),
        "--gap",
        "8",
        "--phase1",
        "3",
        "--phase2",
        "3",
        "--out",
        path(&d("interp")),
    ]);
    for f in [
        "optimized.bvh",
        "baseline.bvh",
        "target.bvh",
        "trace.jsonl",
        "metrics.json",
        "manifest.json",
    ] {
        assert!(d("interp").join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d("interp/metrics.json")).unwrap()).unwrap();
    assert!(metrics.to_string().contains("gap_pa_mpjpe"));
    let trace = std::fs::read_to_string(d("interp/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 6);

    ok(&[
        "refine",
        "--model",
        path(&d("ref/model.ckpt")),
        "--input",
        path(&d("synth/clip_000_noisy.csv")),
        "--gt",
        path(&d("synth/clip_000.bvh")),
        "--out",
        path(&d("refined")),
    ]);
    assert!(d("refined/metrics.json").exists());

    let out = ok(&["eval", path(&d("interp/optimized.bvh")), path(&d("interp/target.bvh"))]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["mpjpe"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_env_var_is_used_when_flag_absent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = Command::new(env!("CARGO_BIN_EXE_motion-prior"))
        .env("MOTION_PRIOR_SEED", "42")
        .args(["synth", "--n", "1", "--length", "8", "--out", path(&a)])
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 42"));
}
