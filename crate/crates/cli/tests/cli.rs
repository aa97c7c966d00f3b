use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use h2h_core::fitting::io::{load_trajectory, save_landmarks_json, save_trajectory};
use h2h_core::fitting::{LandmarkFrame, LandmarkSequence};
use h2h_core::model::save_model;
use h2h_core::synthetic::{SyntheticModelSpec, SyntheticVideoSpec};
use nalgebra::Vector2;
use tempfile::TempDir;

fn h2h(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_h2h"))
        .args(args)
        .env_remove("H2H_OUTPUT_DIR")
        .env_remove("H2H_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", stderr(out));
}

/// A small fixture (100 vertices, 8 frames) written by the binary itself.
fn fixture() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    let out = h2h(&[
        "--output-dir",
        s(&fx),
        "synth-fixture",
        "--vertices",
        "100",
        "--id",
        "4",
        "--exp",
        "3",
        "--frames",
        "8",
        "--target-frames",
        "6",
    ]);
    assert_exit(&out, 0);
    (tmp, fx)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn fixture_fit_reaches_subpixel_reprojection() {
    let (_tmp, fx) = fixture();
    let cfg = fx.join("config.toml");
    assert_exit(&h2h(&["--config", s(&cfg), "fit"]), 0);
    let report = read_json(&fx.join("out/trajectory.report.json"));
    assert!(
        report["meanReprojectionError"].as_f64().unwrap() <= 0.05,
        "{report}"
    );
    assert_eq!(report["frames"], 8);
    assert!(report["energy"]["total"].is_f64());
    assert!(fx.join("out/trajectory.h2ht").is_file());
}

#[test]
fn fit_is_reproducible() {
    let (_tmp, fx) = fixture();
    let cfg = fx.join("config.toml");
    assert_exit(&h2h(&["--config", s(&cfg), "fit", "--name", "a"]), 0);
    assert_exit(
        &h2h(&["--config", s(&cfg), "--threads", "3", "fit", "--name", "b"]),
        0,
    );
    let out = fx.join("out");
    assert_eq!(
        std::fs::read(out.join("a.h2ht")).unwrap(),
        std::fs::read(out.join("b.h2ht")).unwrap()
    );
    let (ra, rb) = (
        read_json(&out.join("a.report.json")),
        read_json(&out.join("b.report.json")),
    );
    assert_eq!(ra, rb);
}

#[test]
fn zero_iteration_budget_reports_unconverged() {
    let (_tmp, fx) = fixture();
    let out = h2h(&[
        "--config",
        s(&fx.join("config.toml")),
        "fit",
        "--max-iterations",
        "0",
    ]);
    assert_exit(&out, 0);
    let report = read_json(&fx.join("out/trajectory.report.json"));
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"], 0);
}

#[test]
fn missing_landmark_file_is_a_data_error_naming_the_path() {
    let (_tmp, fx) = fixture();
    let missing = fx.join("nowhere.json");
    let out = h2h(&[
        "--config",
        s(&fx.join("config.toml")),
        "fit",
        "--landmarks",
        s(&missing),
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains(s(&missing)), "{}", stderr(&out));
}

#[test]
fn configuration_problems_exit_with_one() {
    let (tmp, fx) = fixture();
    // No model anywhere.
    let out = h2h(&[
        "--output-dir",
        s(tmp.path()),
        "fit",
        "--landmarks",
        s(&fx.join("source_landmarks.json")),
    ]);
    assert_exit(&out, 1);
    // Unknown key.
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "colour = \"red\"\n").unwrap();
    assert_exit(&h2h(&["--config", s(&bad), "fit"]), 1);
    // Invalid weight.
    assert_exit(
        &h2h(&[
            "--config",
            s(&fx.join("config.toml")),
            "fit",
            "--w-sm",
            "-1",
        ]),
        1,
    );
    // Image too small.
    assert_exit(
        &h2h(&[
            "--config",
            s(&fx.join("config.toml")),
            "--width",
            "8",
            "fit",
        ]),
        1,
    );
    // Unparseable flags.
    assert_exit(&h2h(&["fit", "--max-iterations", "many"]), 1);
    assert_exit(&h2h(&["frobnicate"]), 1);
}

#[test]
fn degenerate_landmarks_are_a_numerical_failure() {
    let (tmp, fx) = fixture();
    let frame = LandmarkFrame::new(vec![Vector2::new(10.0, 10.0); 68], None).unwrap();
    let lm = tmp.path().join("collapsed.json");
    save_landmarks_json(&LandmarkSequence::new_68(vec![frame; 3]).unwrap(), &lm).unwrap();
    let out = h2h(&[
        "--config",
        s(&fx.join("config.toml")),
        "fit",
        "--landmarks",
        s(&lm),
    ]);
    assert_exit(&out, 3);
}

#[test]
fn reenact_writes_hybrid_and_provenance() {
    let (_tmp, fx) = fixture();
    let cfg = fx.join("config.toml");
    let src = fx.join("source_truth.h2ht");
    let tgt = fx.join("target_truth.h2ht");
    let out = h2h(&[
        "--config",
        s(&cfg),
        "reenact",
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--source-gaze",
        s(&fx.join("source_gaze.json")),
    ]);
    assert_exit(&out, 0);
    let prov = read_json(&fx.join("out/hybrid.provenance.json"));
    assert_eq!(prov["source"], s(&src));
    assert_eq!(prov["target"], s(&tgt));
    let hybrid = load_trajectory(fx.join("out/hybrid.h2ht")).unwrap();
    let source = load_trajectory(&src).unwrap();
    let target = load_trajectory(&tgt).unwrap();
    assert_eq!(hybrid.id_coeffs, target.id_coeffs);
    assert_eq!(hybrid.exp_coeffs, source.exp_coeffs);
    assert!(fx.join("out/hybrid.gaze.json").is_file());
}

#[test]
fn self_reenactment_keeps_expressions_bitwise() {
    let (_tmp, fx) = fixture();
    let src = fx.join("source_truth.h2ht");
    let out = h2h(&[
        "--config",
        s(&fx.join("config.toml")),
        "reenact",
        "--source",
        s(&src),
        "--target",
        s(&src),
    ]);
    assert_exit(&out, 0);
    let hybrid = load_trajectory(fx.join("out/hybrid.h2ht")).unwrap();
    let source = load_trajectory(&src).unwrap();
    let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&hybrid.exp_coeffs), bits(&source.exp_coeffs));
    // Rotations pass through an axis-angle record on disk, so only agree to rounding.
    for (a, b) in hybrid.cameras.iter().zip(&source.cameras) {
        assert!(h2h_core::camera::rotation_distance(&a.rotation, &b.rotation) <= 1e-14);
    }
}

#[test]
fn mismatched_expression_counts_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let a = SyntheticModelSpec::new(100, 3, 3).seed(1).build().unwrap();
    let b = SyntheticModelSpec::new(100, 3, 4).seed(1).build().unwrap();
    let ta = SyntheticVideoSpec::new(4).generate(&a).unwrap().truth;
    let tb = SyntheticVideoSpec::new(4).generate(&b).unwrap().truth;
    let (pa, pb) = (tmp.path().join("a.h2ht"), tmp.path().join("b.h2ht"));
    save_trajectory(&ta, &pa).unwrap();
    save_trajectory(&tb, &pb).unwrap();
    let out = h2h(&[
        "--output-dir",
        s(tmp.path()),
        "reenact",
        "--source",
        s(&pa),
        "--target",
        s(&pb),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn render_is_identical_across_thread_counts_and_reruns() {
    let (_tmp, fx) = fixture();
    let cfg = fx.join("config.toml");
    let traj = fx.join("source_truth.h2ht");
    for (threads, name) in [("1", "one"), ("4", "four"), ("4", "again")] {
        let out = h2h(&[
            "--config",
            s(&cfg),
            "--threads",
            threads,
            "render",
            "--trajectory",
            s(&traj),
            "--name",
            name,
        ]);
        assert_exit(&out, 0);
    }
    let out = fx.join("out");
    let one = dir_bytes(&out.join("one"));
    assert_eq!(one, dir_bytes(&out.join("four")));
    assert_eq!(one, dir_bytes(&out.join("again")));
    let nmfc = one.iter().filter(|(n, _)| n.starts_with("nmfc_")).count();
    let gaze = one.iter().filter(|(n, _)| n.starts_with("gaze_")).count();
    assert_eq!((nmfc, gaze), (8, 8));
    let img = image::open(out.join("one/nmfc_000000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (256, 256));
}

#[test]
fn environment_overrides_output_dir_and_flags_override_environment() {
    let (tmp, fx) = fixture();
    let cfg = fx.join("config.toml");
    let traj = fx.join("source_truth.h2ht");
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");
    let run = |extra: &[&str]| {
        let mut args = vec!["--config", s(&cfg)];
        args.extend_from_slice(extra);
        args.extend_from_slice(&[
            "render",
            "--no-gaze",
            "--trajectory",
            s(&traj),
            "--width",
            "32",
            "--height",
            "24",
        ]);
        Command::new(env!("CARGO_BIN_EXE_h2h"))
            .args(&args)
            .env("H2H_OUTPUT_DIR", &env_dir)
            .env("H2H_THREADS", "2")
            .output()
            .unwrap()
    };
    assert_exit(&run(&[]), 0);
    let img = image::open(env_dir.join("conditioning/nmfc_000000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 24));
    assert!(!env_dir.join("conditioning/gaze_000000.png").exists());
    assert_exit(&run(&["--output-dir", s(&flag_dir)]), 0);
    assert!(flag_dir.join("conditioning/manifest.json").is_file());
}

#[test]
fn eval_reports_zero_for_identical_dirs_and_rejects_count_mismatch() {
    let (tmp, fx) = fixture();
    let cfg = fx.join("config.toml");
    let src = fx.join("source_truth.h2ht");
    let tgt = fx.join("target_truth.h2ht");
    for (traj, name) in [(&src, "a"), (&src, "b"), (&tgt, "c")] {
        assert_exit(
            &h2h(&[
                "--config",
                s(&cfg),
                "render",
                "--no-gaze",
                "--trajectory",
                s(traj),
                "--name",
                name,
            ]),
            0,
        );
    }
    let out = fx.join("out");
    let res = h2h(&[
        "--output-dir",
        s(tmp.path()),
        "eval",
        s(&out.join("a")),
        s(&out.join("b")),
        "--heatmaps",
    ]);
    assert_exit(&res, 0);
    let report = read_json(&tmp.path().join("metrics.json"));
    assert_eq!(report["overall"], 0.0);
    assert_eq!(report["perFrame"].as_array().unwrap().len(), 8);
    assert_eq!(report["heatmaps"].as_array().unwrap().len(), 8);
    assert!(tmp
        .path()
        .join("metrics_heatmaps/heatmap_000000.png")
        .is_file());

    let res = h2h(&[
        "--output-dir",
        s(tmp.path()),
        "eval",
        s(&out.join("a")),
        s(&out.join("c")),
    ]);
    assert_exit(&res, 2);
}

#[test]
fn fixture_model_is_written_readably() {
    let (_tmp, fx) = fixture();
    let model = h2h_core::model::load_model(fx.join("model.h2hm")).unwrap();
    assert_eq!(
        (model.num_vertices(), model.num_id(), model.num_exp()),
        (100, 4, 3)
    );
    let copy = fx.join("copy.h2hm");
    save_model(&model, &copy).unwrap();
    assert_eq!(
        std::fs::read(&copy).unwrap(),
        std::fs::read(fx.join("model.h2hm")).unwrap()
    );
}
