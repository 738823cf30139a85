use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crowdmark::densitymap::{read_density, sidecar_path};
use crowdmark::{Error, Method};
use serde_json::Value;

fn crowdmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdmark"))
        .args(args)
        .env("CROWDMARK_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a three-disk scene via `synth`, returning (image, annotations).
fn synth_scene(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = dir.join("scene.json");
    fs::write(
        &spec,
        r#"{
  "width": 96, "height": 72, "background": 0.1, "noise": 0.05, "seed": 4,
  "disks": [
    {"center": [20, 20], "radius": 5, "intensity": 0.9},
    {"center": [60, 30], "radius": 8},
    {"center": [40, 55], "radius": 4, "intensity": 0.8}
  ]
}"#,
    )
    .unwrap();
    let image = dir.join("scene.png");
    let ann = dir.join("scene.csv");
    let out = crowdmark(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-image",
        s(&image),
        "--out-annotations",
        s(&ann),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (image, ann)
}

#[test]
fn synth_then_generate_writes_map_sidecar_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let (image, ann) = synth_scene(dir.path());
    assert_eq!(fs::read_to_string(&ann).unwrap().lines().next(), Some("x,y"));

    for method in ["static", "knn", "content-aware"] {
        let map_path = dir.path().join(format!("{method}.cadm"));
        let preview = dir.path().join(format!("{method}.png"));
        let out = crowdmark(&[
            "generate",
            "--image",
            s(&image),
            "--annotations",
            s(&ann),
            "--method",
            method,
            "--out",
            s(&map_path),
            "--preview",
            s(&preview),
        ]);
        assert_eq!(code(&out), 0, "{method}: {}", String::from_utf8_lossy(&out.stderr));

        let map = read_density(&map_path).unwrap();
        assert_eq!((map.width, map.height, map.head_count), (96, 72, 3));
        assert_eq!(map.method, method.parse::<Method>().unwrap());
        assert!((map.total() - 3.0).abs() < 1e-3);

        let sidecar: Value = serde_json::from_slice(&fs::read(sidecar_path(&map_path)).unwrap()).unwrap();
        assert_eq!(sidecar["method"], method);
        assert_eq!(sidecar["head_count"], 3);
        assert_eq!(sidecar["sigmas"].as_array().unwrap().len(), 3);

        let png = image::open(&preview).unwrap();
        assert_eq!((png.width(), png.height()), (96, 72));
    }
}

#[test]
fn compare_writes_report_and_previews() {
    let dir = tempfile::tempdir().unwrap();
    let (image, ann) = synth_scene(dir.path());
    let out_dir = dir.path().join("cmp");
    let out = crowdmark(&[
        "compare",
        "--image",
        s(&image),
        "--annotations",
        s(&ann),
        "--out-dir",
        s(&out_dir),
        "--previews",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["head_count"], 3);
    assert_eq!(report["methods"].as_array().unwrap().len(), 3);
    assert_eq!(report["pairs"].as_array().unwrap().len(), 3);
    for m in ["static", "knn", "content-aware"] {
        assert!(out_dir.join(format!("{m}.png")).is_file(), "missing preview for {m}");
    }
}

#[test]
fn segment_debug_writes_window_mask() {
    let dir = tempfile::tempdir().unwrap();
    let (image, ann) = synth_scene(dir.path());
    let mask = dir.path().join("mask.pgm");
    let out = crowdmark(&[
        "segment-debug",
        "--image",
        s(&image),
        "--annotations",
        s(&ann),
        "--head-index",
        "1",
        "--out",
        s(&mask),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let grid = crowdmark::ingest::load_image(&mask).unwrap();
    let inside = grid.values().iter().filter(|&&v| v == 1.0).count();
    assert!(inside > 150 && inside < 260, "radius-8 disk mask has {inside} pixels");
    assert!(grid.values().iter().all(|&v| v == 0.0 || v == 1.0));

    let out = crowdmark(&[
        "segment-debug",
        "--image",
        s(&image),
        "--annotations",
        s(&ann),
        "--head-index",
        "7",
        "--out",
        s(&mask),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn batch_processes_manifest_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = synth_scene(dir.path());
    fs::write(
        dir.path().join("manifest.csv"),
        "image,annotation\nscene.png,scene.csv\n",
    )
    .unwrap();
    let out_dir = dir.path().join("maps");
    let out = crowdmark(&[
        "batch",
        "--manifest",
        s(&dir.path().join("manifest.csv")),
        "--method",
        "knn",
        "--out-dir",
        s(&out_dir),
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_density(&out_dir.join("scene.cadm")).unwrap().head_count, 3);
    assert!(out_dir.join("scene.json").is_file());

    fs::write(
        dir.path().join("bad.csv"),
        "scene.png,scene.csv\nmissing.png,scene.csv\n",
    )
    .unwrap();
    let out = crowdmark(&[
        "batch",
        "--manifest",
        s(&dir.path().join("bad.csv")),
        "--method",
        "static",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_is_applied_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let (image, ann) = synth_scene(dir.path());
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# tuned\nstatic_sigma = 4\ntruncation = 2\n").unwrap();
    let sigma_of = |extra: &[&str]| -> f64 {
        let map_path = dir.path().join("cfg.cadm");
        let mut args = vec![
            "generate",
            "--image",
            s(&image),
            "--annotations",
            s(&ann),
            "--method",
            "static",
            "--out",
            s(&map_path),
            "--config",
            s(&cfg),
        ];
        args.extend_from_slice(extra);
        let out = crowdmark(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let sidecar: Value = serde_json::from_slice(&fs::read(sidecar_path(&map_path)).unwrap()).unwrap();
        assert_eq!(sidecar["config"]["truncation"], 2.0);
        sidecar["sigmas"][0].as_f64().unwrap()
    };
    assert_eq!(sigma_of(&[]), 4.0);
    assert_eq!(sigma_of(&["--sigma", "6"]), 6.0);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&crowdmark(&[])), 1);
    assert_eq!(code(&crowdmark(&["generate", "--image", "a.png"])), 1);
    assert_eq!(code(&crowdmark(&["generate", "--method", "gaussian"])), 1);
    assert_eq!(code(&crowdmark(&["--help"])), 0);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (image, ann) = synth_scene(dir.path());
    let out_path = dir.path().join("o.cadm");
    let run = |img: &Path, a: &Path, extra: &[&str]| {
        let mut args = vec![
            "generate",
            "--image",
            s(img),
            "--annotations",
            s(a),
            "--method",
            "static",
            "--out",
            s(&out_path),
        ];
        args.extend_from_slice(extra);
        code(&crowdmark(&args))
    };
    assert_eq!(run(&dir.path().join("nope.png"), &ann, &[]), 2);

    let outside = dir.path().join("outside.csv");
    fs::write(&outside, "x,y\n10,10\n500,3\n").unwrap();
    assert_eq!(run(&image, &outside, &[]), 2);

    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, "x,y\n10,ten\n").unwrap();
    let out = crowdmark(&[
        "generate",
        "--image",
        s(&image),
        "--annotations",
        s(&garbled),
        "--method",
        "knn",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(run(&image, &ann, &["--sigma=-1"]), 2);
    assert!(!out_path.exists(), "no output on failure");
}

#[test]
fn internal_errors_map_to_exit_three() {
    assert!(!Error::Internal("x".into()).is_input_error());
    let wrapped = Error::Method {
        method: "knn".into(),
        source: Box::new(Error::Internal("x".into())),
    };
    assert!(!wrapped.is_input_error());
    assert_eq!(crowdmark::cli::EXIT_INTERNAL, 3);
}
