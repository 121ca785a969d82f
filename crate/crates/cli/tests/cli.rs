use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hdrv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdrv"))
        .args(args)
        .env_remove("HDRV_JOBS")
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = hdrv(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn schema_check(name: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../schemas/v1/{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

/// Scene of `frames` HDR frames rendered to a small synthetic sequence.
fn synth_sequence(dir: &Path, frames: usize, rgb: bool) -> PathBuf {
    synth_sized(dir, 64, frames, rgb, "")
}

fn synth_sized(dir: &Path, size: usize, frames: usize, rgb: bool, extra: &str) -> PathBuf {
    let hdr = dir.join("hdr");
    let seq = dir.join("seq");
    let (n, size) = (frames.to_string(), size.to_string());
    let mut args = vec![
        "render-scene",
        "--width",
        &size,
        "--height",
        &size,
        "--frames",
        &n,
        "-o",
        s(&hdr),
    ];
    if rgb {
        args.push("--rgb");
    }
    schema_check("scene-report", &ok_json(&args));
    let cfg = dir.join("synth.json");
    let domain = if rgb { "srgb" } else { "raw" };
    std::fs::write(&cfg, format!(r#"{{"domain": "{domain}", "seed": 3{extra}}}"#)).unwrap();
    schema_check(
        "synth-config",
        &serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap(),
    );
    let m = ok_json(&["synth", s(&hdr), "--config", s(&cfg), "-o", s(&seq)]);
    schema_check("manifest", &m);
    seq.join("manifest.json")
}

#[test]
fn reconstruct_five_frames_gives_three_outputs() {
    let dir = TempDir::new().unwrap();
    let manifest = synth_sequence(dir.path(), 5, false);
    let out = dir.path().join("rec");
    let report = ok_json(&["reconstruct", s(&manifest), "-o", s(&out)]);
    schema_check("reconstruct-report", &report);
    assert_eq!(
        report["outputs"],
        serde_json::json!(["frame_0001.pfm", "frame_0002.pfm", "frame_0003.pfm"])
    );
    assert_eq!(report["skipped"], serde_json::json!([0, 4]));
    for name in ["frame_0001.pfm", "frame_0002.pfm", "frame_0003.pfm", "reconstruct.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let stats = std::fs::read_to_string(out.join("stats.jsonl")).unwrap();
    let lines: Vec<Value> = stats.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        schema_check("frame-stats", l);
    }
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(out.join("frame_0001.json")).unwrap()).unwrap();
    schema_check("hdr-sidecar", &sidecar);
}

#[test]
fn eval_against_itself_scores_99() {
    let dir = TempDir::new().unwrap();
    let hdr = dir.path().join("hdr");
    ok_json(&[
        "render-scene",
        "--width",
        "32",
        "--height",
        "32",
        "--frames",
        "2",
        "-o",
        s(&hdr),
    ]);
    let report_path = dir.path().join("eval.json");
    let report = ok_json(&[
        "eval",
        s(&hdr),
        s(&hdr),
        "--metrics",
        "psnr_mu,l1_mu",
        "-o",
        s(&report_path),
    ]);
    schema_check("eval-report", &report);
    assert_eq!(report["mean_psnr_mu"], 99.0);
    assert_eq!(report["mean_l1_mu"], 0.0);
    assert_eq!(report["frames"].as_array().unwrap().len(), 2);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(written, report);
}

#[test]
fn full_chain_on_static_scene() {
    let dir = TempDir::new().unwrap();
    let noiseless = r#", "noise_variance": [0, 0], "tone_d": [0, 0]"#;
    let manifest = synth_sized(dir.path(), 256, 5, false, noiseless);
    let rec = dir.path().join("rec");
    ok_json(&["reconstruct", s(&manifest), "-o", s(&rec)]);
    let report = ok_json(&["eval", s(&rec), s(&manifest.parent().unwrap().join("gt"))]);
    assert!(report["mean_psnr_mu"].as_f64().unwrap() >= 50.0, "{report}");
}

#[test]
fn srgb_sequence_reconstructs() {
    let dir = TempDir::new().unwrap();
    let manifest = synth_sequence(dir.path(), 3, true);
    let out = dir.path().join("rec");
    let report = ok_json(&["reconstruct", s(&manifest), "-o", s(&out), "--domain", "srgb"]);
    assert_eq!(report["domain"], "srgb");
    let e = hdrv(&["reconstruct", s(&manifest), "-o", s(&out), "--domain", "raw"]);
    assert_eq!(e.status.code(), Some(1));
}

#[test]
fn merge_gt_and_screen_on_raw_pairs() {
    let dir = TempDir::new().unwrap();
    let manifest = synth_sequence(dir.path(), 4, false);
    let gt = dir.path().join("gt");
    let report = ok_json(&["merge-gt", s(&manifest), "-o", s(&gt)]);
    schema_check("merge-gt-report", &report);
    assert_eq!(report["pairs"].as_array().unwrap().len(), 2);
    for name in [
        "gt_raw_0001.pfm",
        "gt_srgb_0001.pfm",
        "displacement_0001.png",
        "merge_gt.json",
    ] {
        assert!(gt.join(name).is_file(), "{name}");
    }
    let screen = ok_json(&["screen", s(&manifest)]);
    schema_check("screen-report", &screen);
    assert_eq!(screen["pairs"].as_array().unwrap().len(), 2);
}

#[test]
fn preview_writes_png() {
    let dir = TempDir::new().unwrap();
    let hdr = dir.path().join("hdr");
    ok_json(&[
        "render-scene",
        "--width",
        "32",
        "--height",
        "16",
        "--frames",
        "1",
        "-o",
        s(&hdr),
    ]);
    let png = dir.path().join("p.png");
    let report = ok_json(&["preview", s(&hdr.join("frame_0000.pfm")), "-o", s(&png), "--mu", "5000"]);
    schema_check("preview-report", &report);
    assert_eq!(report["params"]["mu"], 5000.0);
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let manifest = synth_sequence(dir.path(), 4, false);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok_json(&["--jobs", "1", "reconstruct", s(&manifest), "-o", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_hdrv"))
        .args(["reconstruct", s(&manifest), "-o", s(&b)])
        .env("HDRV_JOBS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    for name in ["frame_0001.pfm", "frame_0002.pfm", "stats.jsonl", "reconstruct.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn missing_manifest_exits_2() {
    let out = hdrv(&["reconstruct", "/nonexistent/manifest.json", "-o", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_ground_truth_exits_2() {
    let dir = TempDir::new().unwrap();
    let hdr = dir.path().join("hdr");
    ok_json(&[
        "render-scene",
        "--width",
        "16",
        "--height",
        "16",
        "--frames",
        "1",
        "-o",
        s(&hdr),
    ]);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = hdrv(&["eval", s(&hdr), s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame_0000.pfm"));
}

#[test]
fn schema_violation_exits_1_naming_the_frame() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("a.png"), b"").unwrap();
    let m = r#"{"schema_version": 1, "scene": "s", "calibration": {"bit_depth": 8},
        "frames": [{"path": "a.png", "role": "short", "domain": "srgb"}]}"#;
    let p = dir.path().join("m.json");
    std::fs::write(&p, m).unwrap();
    let out = hdrv(&["screen", s(&p)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("frames[0]") && err.contains("exposure_time"), "{err}");
}

#[test]
fn irregular_pattern_needs_opt_in() {
    let dir = TempDir::new().unwrap();
    let manifest = synth_sequence(dir.path(), 3, false);
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let frames = m["frames"].as_array_mut().unwrap();
    let first = frames[0].clone();
    frames[1] = first;
    std::fs::write(&manifest, m.to_string()).unwrap();
    let rec = dir.path().join("rec");
    assert_eq!(
        hdrv(&["reconstruct", s(&manifest), "-o", s(&rec)]).status.code(),
        Some(1)
    );
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(hdrv(&["reconstruct"]).status.code(), Some(1));
    assert_eq!(hdrv(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hdrv(&["eval", "a", "b", "--metrics", "ssim"]).status.code(), Some(1));
    let help = hdrv(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("merge-gt"));
}

#[test]
fn default_configs_match_their_schemas() {
    use hdrv_core::{isp::IspConfig, merge::ScreenConfig, reconstruct::ReconstructConfig, synth::SynthConfig};
    schema_check("synth-config", &serde_json::to_value(SynthConfig::default()).unwrap());
    schema_check(
        "reconstruct-config",
        &serde_json::to_value(ReconstructConfig::default()).unwrap(),
    );
    schema_check("screen-config", &serde_json::to_value(ScreenConfig::default()).unwrap());
    schema_check("isp-config", &serde_json::to_value(IspConfig::default()).unwrap());
}
