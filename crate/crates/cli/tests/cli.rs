use std::path::Path;
use std::process::{Command, Output};

use sixdgen::curation::{load_manifest, save_manifest, ClipMetrics, ClipRecord, Smoothness};
use sixdgen::numerics::{load_tensor, save_tensor, Tensor};
use sixdgen::postopt::synthetic::{orbit_cameras, render_xyz, Surface};
use sixdgen::postopt::{rotation_error_deg, CameraRecord};
use sixdgen::sixd::init_xyz;
use sixdgen::sixd::io::save_ppm;

fn sixdgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sixdgen")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sixdgen(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn init_xyz_writes_the_plane() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("init.tnsr");
    ok(&["init-xyz", "--height", "480", "--width", "720", "--out", p(&out)]);
    assert_eq!(load_tensor(&out).unwrap(), init_xyz(480, 720).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let out = sixdgen(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sixdgen(&["init-xyz", "--height", "tall", "--width", "4", "--out", "x"]).status.code(), Some(2));
    assert_eq!(
        sixdgen(&["distance", "--strategy", "diagonal", "--frames", "1", "--rows", "1", "--cols", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(sixdgen(&["recover-camera", "--xyz", "a", "--out", "b", "--mode", "both"]).status.code(), Some(2));
    assert_eq!(sixdgen(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tnsr");
    let out = sixdgen(&["to-ply", "--rgb", p(&missing), "--xyz", p(&missing), "--out", "x.ply"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let nowhere = dir.path().join("no/such/dir/init.tnsr");
    assert_eq!(sixdgen(&["init-xyz", "--height", "4", "--width", "4", "--out", p(&nowhere)]).status.code(), Some(1));
    assert_eq!(
        sixdgen(&["init-xyz", "--height", "1", "--width", "4", "--out", p(&dir.path().join("a"))]).status.code(),
        Some(1)
    );
}

#[test]
fn every_subcommand_has_help() {
    let cases: &[(&str, &[&str])] = &[
        ("init-xyz", &["--height", "--width", "--out", "--config"]),
        ("encode", &["--input", "--out", "--modality", "--decode", "--stats", "--temporal", "--spatial", "--seed"]),
        ("stats", &["--latents", "--out"]),
        ("fuse", &["--unfuse", "--rgb", "--xyz", "--fused", "--sidecar", "--strategy", "--xyz-first"]),
        ("distance", &["--strategy", "--frames", "--rows", "--cols"]),
        ("train", &["--out", "--seed", "--lr", "--steps", "--batch-size", "--strategy", "--hidden", "--patch"]),
        ("sample", &["--checkpoint", "--first-frame", "--out-rgb", "--out-xyz", "--frames", "--steps", "--seed"]),
        ("recover-camera", &["--xyz", "--out", "--mode", "--depth", "--report", "--jobs"]),
        ("curate", &["--manifest", "--out", "--luma-min", "--tau", "--top-r", "--epsilon", "--combine", "--jobs"]),
        ("to-ply", &["--rgb", "--xyz", "--frame", "--out"]),
    ];
    for (cmd, flags) in cases {
        let out = ok(&[cmd, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in *flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
    ok(&["--help"]);
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"strategy": "frame", "frames": 2, "rows": 3, "cols": 3}"#).unwrap();
    let out = ok(&["distance", "--config", p(&cfg)]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "frame 18");
    let out = ok(&["distance", "--config", p(&cfg), "--strategy", "width"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "width 3");
    std::fs::write(&cfg, r#"{"frames": "many"}"#).unwrap();
    assert_eq!(sixdgen(&["distance", "--config", p(&cfg), "--rows", "1", "--cols", "1"]).status.code(), Some(2));
}

fn video(frames: usize, h: usize, w: usize, seed: u32) -> Tensor {
    Tensor::from_fn(&[frames, h, w, 3], |i| {
        let k = (i[0] * 31 + i[1] * 7 + i[2] * 3 + i[3]) as u32 ^ seed;
        (k % 97) as f32 / 96.0
    })
    .unwrap()
}

#[test]
fn encode_fuse_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    save_tensor(d("rgb.tnsr"), &video(5, 16, 16, 1)).unwrap();
    save_tensor(d("xyz.tnsr"), &video(5, 16, 16, 2).map(|v| 2.0 * v - 1.0)).unwrap();
    ok(&["encode", "--input", p(&d("rgb.tnsr")), "--out", p(&d("zr.tnsr"))]);
    ok(&["encode", "--input", p(&d("xyz.tnsr")), "--modality", "xyz", "--out", p(&d("zx.tnsr"))]);
    ok(&["stats", "--latents", p(&d("zx.tnsr")), "--out", p(&d("stats.json"))]);
    ok(&[
        "encode",
        "--input",
        p(&d("xyz.tnsr")),
        "--modality",
        "xyz",
        "--stats",
        p(&d("stats.json")),
        "--out",
        p(&d("zxn.tnsr")),
    ]);
    let norm = load_tensor(d("zxn.tnsr")).unwrap();
    let mean = norm.data().iter().map(|&v| v as f64).sum::<f64>() / norm.numel() as f64;
    assert!(mean.abs() < 1e-4);

    ok(&[
        "fuse",
        "--rgb",
        p(&d("zr.tnsr")),
        "--xyz",
        p(&d("zx.tnsr")),
        "--fused",
        p(&d("f.tnsr")),
        "--strategy",
        "height",
    ]);
    assert!(d("f.tnsr.json").exists());
    ok(&["fuse", "--unfuse", "--fused", p(&d("f.tnsr")), "--rgb", p(&d("r2.tnsr")), "--xyz", p(&d("x2.tnsr"))]);
    assert_eq!(std::fs::read(d("r2.tnsr")).unwrap(), std::fs::read(d("zr.tnsr")).unwrap());
    assert_eq!(std::fs::read(d("x2.tnsr")).unwrap(), std::fs::read(d("zx.tnsr")).unwrap());

    ok(&[
        "encode",
        "--decode",
        "--input",
        p(&d("zxn.tnsr")),
        "--modality",
        "xyz",
        "--stats",
        p(&d("stats.json")),
        "--out",
        p(&d("back.tnsr")),
    ]);
    let back = load_tensor(d("back.tnsr")).unwrap();
    let orig = load_tensor(d("xyz.tnsr")).unwrap();
    let err = back.data().iter().zip(orig.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-4, "{err}");

    ok(&["to-ply", "--rgb", p(&d("rgb.tnsr")), "--xyz", p(&d("xyz.tnsr")), "--frame", "2", "--out", p(&d("c.ply"))]);
    let ply = std::fs::read_to_string(d("c.ply")).unwrap();
    assert!(ply.contains("element vertex 256"));
}

#[test]
fn recover_camera_on_synthetic_orbit() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (24, 32);
    let cams = orbit_cameras(4, h, w, 30.0, 3.0, 30.0, 20.0).unwrap();
    let surface = Surface { amplitude: 0.12, freq: [1.4, 1.1], phase: [0.3, 0.9] };
    let frames: Vec<Tensor> = cams.iter().map(|c| render_xyz(c, h, w, &surface).unwrap()).collect();
    let seq = Tensor::new(vec![4, h, w, 3], frames.iter().flat_map(|f| f.data().to_vec()).collect()).unwrap();
    let seq_path = dir.path().join("seq.tnsr");
    save_tensor(&seq_path, &seq).unwrap();

    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let depth = dir.path().join(format!("{name}.depth.tnsr"));
        ok(&[
            "recover-camera",
            "--xyz",
            p(&seq_path),
            "--mode",
            "shared-k",
            "--jobs",
            jobs,
            "--out",
            p(&out),
            "--depth",
            p(&depth),
        ]);
        (std::fs::read(out).unwrap(), std::fs::read(depth).unwrap())
    };
    let (json, depth) = run("a.json", "1");
    let records: Vec<CameraRecord> = serde_json::from_slice(&json).unwrap();
    assert_eq!(records.len(), 4);
    for (rec, truth) in records.iter().zip(&cams) {
        let est = rec.camera().unwrap();
        assert!(rotation_error_deg(&est.r, &truth.r) < 0.01);
        assert!((est.f - truth.f).abs() / truth.f < 1e-3);
        assert!(rec.rmse_px < 1e-3);
    }
    assert_eq!(load_tensor(dir.path().join("a.json.depth.tnsr")).unwrap().shape(), &[4, h, w]);
    assert_eq!(run("b.json", "3"), (json, depth));
}

fn clip(id: &str, luma: f64, mcv: f64) -> ClipRecord {
    let mut r = ClipRecord::new(id, "synthetic", 16);
    r.metrics = ClipMetrics {
        luma_mean: Some(luma),
        mcv: Some(mcv),
        hcpr: Some(mcv / 10.0),
        alignment_loss: Some(0.1),
        cs: Some(Smoothness { v_mean: 0.1, a_mean: 0.0, kappa_mean: 0.0 }),
    };
    r
}

#[test]
fn curate_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let recs = vec![clip("c", 100.0, 3.0), clip("a", 5.0, 9.0), clip("b", 120.0, 1.0), clip("d", 90.0, 2.0)];
    save_manifest(d("in.jsonl"), &recs).unwrap();
    ok(&["curate", "--manifest", p(&d("in.jsonl")), "--out", p(&d("out.jsonl")), "--top-r", "50"]);
    let out = load_manifest(d("out.jsonl")).unwrap();
    let summary: Vec<(&str, bool, &str)> = out.iter().map(|r| (r.id.as_str(), r.keep, r.reason.as_str())).collect();
    assert_eq!(summary, [("a", false, "luma"), ("b", false, "confidence"), ("c", true, ""), ("d", true, "")]);

    ok(&["curate", "--manifest", p(&d("out.jsonl")), "--out", p(&d("again.jsonl")), "--top-r", "50", "--jobs", "2"]);
    assert_eq!(std::fs::read(d("out.jsonl")).unwrap(), std::fs::read(d("again.jsonl")).unwrap());
    assert_eq!(
        sixdgen(&["curate", "--manifest", p(&d("in.jsonl")), "--out", p(&d("x.jsonl")), "--tau", "0"]).status.code(),
        Some(1)
    );
}

#[test]
fn train_and_sample_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let train = |out: &Path| {
        ok(&[
            "train",
            "--out",
            p(out),
            "--steps",
            "3",
            "--hidden",
            "16",
            "--heads",
            "2",
            "--blocks",
            "1",
            "--videos",
            "4",
            "--heldout",
            "2",
            "--seed",
            "7",
            "--log-every",
            "0",
        ]);
    };
    train(&d("ck1"));
    train(&d("ck2"));
    let mut names: Vec<_> = std::fs::read_dir(d("ck1")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 2);
    for n in &names {
        assert_eq!(std::fs::read(d("ck1").join(n)).unwrap(), std::fs::read(d("ck2").join(n)).unwrap(), "{n:?}");
    }

    save_ppm(d("first.ppm"), &video(1, 32, 32, 3).reshape(&[32, 32, 3]).unwrap()).unwrap();
    let sample = |tag: &str| {
        let (rgb, xyz) = (d(&format!("{tag}.rgb.tnsr")), d(&format!("{tag}.xyz.tnsr")));
        ok(&[
            "sample",
            "--checkpoint",
            p(&d("ck1")),
            "--first-frame",
            p(&d("first.ppm")),
            "--steps",
            "4",
            "--seed",
            "3",
            "--out-rgb",
            p(&rgb),
            "--out-xyz",
            p(&xyz),
        ]);
        (std::fs::read(rgb).unwrap(), std::fs::read(xyz).unwrap())
    };
    let a = sample("a");
    assert_eq!(a, sample("b"));
    let rgb = load_tensor(d("a.rgb.tnsr")).unwrap();
    assert_eq!(rgb.shape(), &[5, 32, 32, 3]);
    assert!(rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
