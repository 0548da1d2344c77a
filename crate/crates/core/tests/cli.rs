use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctml::dataset::{read_manifest, read_slice};
use ctml::inference::Model;
use ctml::io::read_image;
use ctml::metrics::{data_range, psnr, REPORT_HEADER};
use ctml::network::{Ablation, Task};
use ctml::trainer::{load_checkpoint, FINAL_CHECKPOINT};

fn ctml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctml"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 12] = [
    "--phantoms", "3", "--size", "32", "--views", "24", "--detectors", "48", "--sparse-keep", "6", "--holdout", "1",
];

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, Output) {
    let out = dir.join(name);
    let mut args = vec!["simulate"];
    args.extend(TINY);
    args.extend(extra);
    args.extend(["--out", p(&out)]);
    let o = ctml(&args);
    (out, o)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn train(data: &Path, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--config", p(cfg), "--out", p(out)];
    args.extend(extra);
    ctml(&args)
}

const TINY_TRAIN: &str = r#"{"steps": 2, "stages": 2, "base_channels": 2, "lr": 1e-3, "val_every": 1}"#;

#[test]
fn keep_all_gives_three_identical_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = ctml(&[
        "simulate", "--phantoms", "1", "--holdout", "0", "--size", "32", "--views", "24", "--detectors", "48",
        "--sparse-keep", "24", "--limited-deg", "360", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_slice(&out.join("slice_0000")).unwrap();
    let t = &s.triplet;
    assert_eq!(t.p_sv.data, t.p_ld.data);
    assert_eq!(t.p_lv.data, t.p_ld.data);
    assert_eq!(t.mu_sv.data, t.mu_ld.data);
    assert_eq!(t.mu_lv.data, t.mu_ld.data);
}

#[test]
fn default_simulation_keeps_stride_eight() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = ctml(&["simulate", "--phantoms", "1", "--holdout", "0", "--out", p(&out)]);
    assert!(o.status.success());
    let s = read_slice(&out.join("slice_0000")).unwrap();
    let kept = s.triplet.mask_sv.kept_indices().to_vec();
    assert_eq!(kept.len(), 36);
    assert!(kept.iter().enumerate().all(|(i, v)| *v == 8 * i));
    assert_eq!(s.triplet.mask_lv.keep_count(), 96);
}

#[test]
fn invalid_sparse_keep_is_a_config_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = ctml(&["simulate", "--views", "24", "--sparse-keep", "5", "--size", "32", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("evenly divide"));
    assert!(!out.exists());
}

#[test]
fn simulate_and_train_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = simulate(dir.path(), "a", &[]);
    let (b, _) = simulate(dir.path(), "b", &[]);
    for f in ["manifest.json", "slice_0000/ld.ctsg", "slice_0001/lv.ctim", "slice_0002/meta.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let cfg = write_config(dir.path(), TINY_TRAIN);
    let (ra, rb) = (dir.path().join("ra"), dir.path().join("rb"));
    assert!(train(&a, &cfg, &ra, &[]).status.success());
    assert!(train(&a, &cfg, &rb, &[]).status.success());
    for f in [FINAL_CHECKPOINT, "metrics.csv", "loss_curve.png"] {
        assert_eq!(std::fs::read(ra.join(f)).unwrap(), std::fs::read(rb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_variants_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = simulate(dir.path(), "ds", &[]);
    let cfg = write_config(dir.path(), TINY_TRAIN);

    let out = dir.path().join("no_pnm");
    let o = train(&data, &cfg, &out, &["--ablation", "no-pnm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (store, meta) = load_checkpoint(&out.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(meta.train.ablation, Ablation::NoPnm);
    assert!(store.names().iter().all(|n| !n.contains("/pnm/")));
    let log = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(log.starts_with("step,L_ml_prior,L_ml_out,L_rc,L_total,psnr_fvct,psnr_svct,psnr_lvct\n"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"steps": 8, "stages": 2, "base_channels": 2, "lr": 1e30}"#).unwrap();
    let o = train(&data, &bad, &dir.path().join("nan"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("numerical failure") && err.contains("gradient norms"), "{err}");

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"learning_rate": 1}"#).unwrap();
    let out = dir.path().join("unknown_out");
    assert_eq!(train(&data, &unknown, &out, &[]).status.code(), Some(2));
    assert!(!out.exists());

    let missing = dir.path().join("missing");
    assert_eq!(train(&missing, &cfg, &dir.path().join("x"), &[]).status.code(), Some(4));
}

#[test]
fn untrained_checkpoint_reproduces_fbp() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = simulate(dir.path(), "ds", &[]);
    let cfg = write_config(dir.path(), r#"{"steps": 0, "stages": 2, "base_channels": 2}"#);
    let run = dir.path().join("run");
    assert!(train(&data, &cfg, &run, &[]).status.success());
    let ckpt = run.join(FINAL_CHECKPOINT);

    let slice_dir = data.join("slice_0002");
    let img = dir.path().join("ld.ctim");
    let png = dir.path().join("ld.png");
    let o = ctml(&[
        "reconstruct", "--ckpt", p(&ckpt), "--input", p(&slice_dir), "--task", "fvct", "--out", p(&img), "--png", p(&png),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(png.exists());
    let got = read_image(&img).unwrap();
    let slice = read_slice(&slice_dir).unwrap();
    let scale = slice.triplet.mu_ld.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in got.data.iter().zip(slice.triplet.mu_ld.data.iter()) {
        assert!((a - b).abs() < 1e-5 * scale, "{a} vs {b}");
    }

    // the written file holds exactly the in-memory result
    let (model, _) = Model::load(&ckpt).unwrap();
    let (_, out) = model.reconstruct(&slice, Task::Fvct).unwrap();
    for (a, b) in got.data.iter().zip(out.data.iter()) {
        assert_eq!(*a, *b as f32 as f64);
    }

    let o = ctml(&["reconstruct", "--ckpt", p(&ckpt), "--input", p(&slice_dir), "--task", "lvct", "--out", "x.tiff"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_report_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = simulate(dir.path(), "ds", &[]);
    let cfg = write_config(dir.path(), TINY_TRAIN);
    let run = dir.path().join("run");
    assert!(train(&data, &cfg, &run, &[]).status.success());
    let report = dir.path().join("report.csv");
    let o = ctml(&["eval", "--ckpt", p(&run.join(FINAL_CHECKPOINT)), "--data", p(&data), "--report", p(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // one fbp and one model row per task, then their summaries
    assert_eq!(rows.len(), 12);
    assert!(rows[6..].iter().all(|r| r[0] == "summary"));

    let m = read_manifest(&data).unwrap();
    let slice = read_slice(&data.join(&m.test[0])).unwrap();
    let (model, _) = Model::load(&run.join(FINAL_CHECKPOINT)).unwrap();
    let (_, out) = model.reconstruct(&slice, Task::Svct).unwrap();
    let want = psnr(&out.data, &slice.clean.data, data_range([&slice.clean.data])).unwrap();
    let row = rows.iter().find(|r| r[1] == "svct" && r[2] == "ss-ctml" && r[0] != "summary").unwrap();
    assert!((row[3].parse::<f64>().unwrap() - want).abs() < 1e-9);
}

#[test]
fn gradcheck_reports_every_category() {
    let o = ctml(&["gradcheck"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for c in ["primitives", "adjoint identity", "projector layers", "end-to-end subnetwork"] {
        assert!(text.contains(c), "{text}");
    }
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_ctml"))
        .args(["gradcheck"])
        .env("CTML_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
