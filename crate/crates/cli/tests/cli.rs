use std::path::Path;
use std::process::{Command, Output};

fn sfms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfms")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_scene(dir: &Path) -> std::path::PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let cfg = dir.join("synth.json");
    std::fs::write(&cfg, r#"{"scene": "std-40", "width": 32, "height": 32, "grid": 8, "seed": 2}"#).unwrap();
    let scene = dir.join("scene");
    let out = sfms(&["synth", "--config", p(&cfg), "--out", p(&scene)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    scene
}

#[test]
fn synth_writes_a_complete_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    for f in ["manifest.json", "img_000.pgm", "img_039.pgm", "features.json", "template.json", "reconstruct.json", "truth/surface.json", "truth/normals.bin"] {
        assert!(scene.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let truth = scene.join("truth/surface.json");
    let out = sfms(&["eval", "--truth", p(&truth), "--recon", p(&truth), "--features", p(&scene.join("features.json")), "--density", "40x40"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["mean_pct"].as_f64().unwrap() <= 1e-4);
    assert!(report["rms_pct"].as_f64().unwrap() <= 1e-4);
    assert_eq!(report["n_samples"], 1600);
}

#[test]
fn export_writes_an_obj_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let mesh = dir.path().join("mesh.obj");
    let out = sfms(&["export", "--surface", p(&scene.join("truth/surface.json")), "--density", "5x4", "--out", p(&mesh)]);
    assert_eq!(out.status.code(), Some(0));
    let obj = std::fs::read_to_string(mesh).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 20);
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 24);
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(sfms(&["reconstruct"]).status.code(), Some(1));
    assert_eq!(sfms(&["export", "--surface", "s.json", "--density", "1x9", "--out", "m.obj"]).status.code(), Some(1));
    assert_eq!(sfms(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_and_malformed_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(sfms(&["synth", "--config", p(&missing), "--out", p(dir.path())]).status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scene": "std-40", "bit_depth": 12}"#).unwrap();
    let out = sfms(&["synth", "--config", p(&bad), "--out", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bit_depth"));
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(sfms(&["synth", "--config", p(&bad), "--out", p(&dir.path().join("s"))]).status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    std::fs::write(&cfg, r#"{"scene": "std-40", "width": 16, "height": 16, "grid": 6}"#).unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = sfms(&["synth", "--config", p(&cfg), "--out", p(&blocker.join("scene"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_scene(&dir.path().join("a"));
    let b = small_scene(&dir.path().join("b"));
    for f in ["img_000.pgm", "img_025.pgm", "manifest.json", "template.json", "truth/normals.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
