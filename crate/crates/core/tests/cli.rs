use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

use phaseseg::deconv::DeconvCalibration;
use phaseseg::eval::misclassification_error;
use phaseseg::io::{read_labels, read_raster};
use phaseseg::pipeline::{run, Method, PipelineConfig};

fn phaseseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaseseg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = phaseseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A nominal phantom written by `synth` into `dir/synth`.
fn synth(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("synth");
    ok(&["synth", "--out", path(&out), "--seed", "3"]);
    out
}

#[test]
fn synth_then_segment_meets_the_error_bound() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    for f in ["image.pgm", "truth.pgm", "truth_overlay.png", "phantom.cfg", "manifest.json"] {
        assert!(s.join(f).is_file(), "missing {f}");
    }
    let seg = dir.path().join("seg");
    ok(&["segment", path(&s.join("image.pgm")), "--out", path(&seg)]);
    let truth = read_labels(&s.join("truth.pgm")).unwrap();
    let labels = read_labels(&seg.join("image_labels.pgm")).unwrap();
    assert!(misclassification_error(&truth, &labels).unwrap() < 0.02);
    for f in ["image_overlay.png", "image_transitions.pgm", "image_report.json", "manifest.json"] {
        assert!(seg.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn gradient_segmentation_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let seg = dir.path().join("seg");
    ok(&["segment", path(&s.join("image.pgm")), "--out", path(&seg), "--method", "gradient", "--tau", "30"]);
    let img = read_raster(&s.join("image.pgm")).unwrap();
    let (expected, _) = run(&img, &PipelineConfig::default().with_method(Method::gradient())).unwrap();
    assert_eq!(read_labels(&seg.join("image_labels.pgm")).unwrap(), expected);
}

#[test]
fn empty_input_is_an_io_error_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.pgm");
    fs::write(&input, b"").unwrap();
    let out = dir.path().join("never");
    let res = phaseseg(&["segment", path(&input), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&res.stderr).contains("phaseseg segment"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "classes = 3\nno_such_key = 1\n").unwrap();
    let res = phaseseg(&["synth", "--out", path(&dir.path().join("o")), "--config", path(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no_such_key"));

    let res = phaseseg(&["segment", path(&cfg), "--out", path(&dir.path().join("o")), "--method", "classification", "--tau", "3"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(phaseseg(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn directory_input_segments_every_raster() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let stack = dir.path().join("stack");
    fs::create_dir(&stack).unwrap();
    fs::copy(s.join("image.pgm"), stack.join("a.pgm")).unwrap();
    fs::copy(s.join("image.pgm"), stack.join("b.pgm")).unwrap();
    fs::write(stack.join("notes.txt"), "not an image").unwrap();
    let seg = dir.path().join("seg");
    ok(&["segment", path(&stack), "--out", path(&seg), "--method", "gradient"]);
    let a = fs::read(seg.join("a_labels.pgm")).unwrap();
    assert_eq!(a, fs::read(seg.join("b_labels.pgm")).unwrap());
    assert!(!seg.join("notes_labels.pgm").exists());
}

#[test]
fn saved_calibration_is_reused() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let img = s.join("image.pgm");
    let cal_dir = dir.path().join("cal");
    ok(&["calibrate", "--out", path(&cal_dir), "--image", path(&img)]);
    let cal_path = cal_dir.join("calibration.json");
    let cal = DeconvCalibration::from_json(&fs::read_to_string(&cal_path).unwrap()).unwrap();
    assert_eq!(cal.sigma_cal, 2.0);

    let fresh = dir.path().join("fresh");
    let reused = dir.path().join("reused");
    ok(&["segment", path(&img), "--out", path(&fresh), "--method", "difference"]);
    ok(&["segment", path(&img), "--out", path(&reused), "--method", "difference", "--calibration", path(&cal_path)]);
    assert_eq!(
        fs::read(fresh.join("image_labels.pgm")).unwrap(),
        fs::read(reused.join("image_labels.pgm")).unwrap()
    );

    let res = phaseseg(&["calibrate", "--out", path(&cal_dir), "--image", path(&img), "--noise-sigma", "3"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn hist_suggests_thresholds() {
    let dir = TempDir::new().unwrap();
    let s = synth(dir.path());
    let h = dir.path().join("hist");
    ok(&["hist", path(&s.join("image.pgm")), "--out", path(&h)]);
    for f in ["hist_difference.csv", "hist_gradient.csv", "thresholds.json"] {
        assert!(h.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(h.join("hist_gradient.csv")).unwrap();
    assert_eq!(csv.lines().count(), 257);
}
