use std::path::Path;
use std::process::{Command, Output};

use pcreg::eval::strip_time_column;
use pcreg::io::{read_xyz, write_xyz};
use pcreg::se3::{euler_to_transform, rotation_error};
use pcreg::Transform;

fn pcreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pcreg(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "points_per_cloud = 48\ntest_pairs = 6\nencoder_widths = 8,16\nepochs = 2\npairs_per_epoch = 8\nbatch_size = 4\nunroll_iterations = 2\nmax_iterations = 5\n";

#[test]
fn synth_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a.xyz"), d.path().join("b.ply"));
    ok(&["synth", "--shape", "box", "--points", "100", "--seed", "3", "--out", s(&a)]);
    ok(&["synth", "--shape", "box", "--points", "100", "--seed", "3", "--out", s(&b)]);
    let ca = pcreg::io::load_cloud(&a).unwrap();
    assert_eq!(ca.len(), 100);
    assert_eq!(ca, pcreg::io::load_cloud(&b).unwrap());
    let stdout = ok(&["synth", "--shape", "box", "--points", "100", "--seed", "3"]);
    assert_eq!(read_xyz(&stdout).unwrap(), ca);
}

#[test]
fn register_icp_prints_matrix() {
    let d = tempfile::tempdir().unwrap();
    let (src, tpl) = (d.path().join("src.xyz"), d.path().join("tpl.xyz"));
    ok(&["synth", "--shape", "l-bracket", "--points", "400", "--normalize", "--out", s(&tpl)]);
    let template = pcreg::io::load_cloud(&tpl).unwrap();
    let gt = euler_to_transform([10.0, -5.0, 8.0], [0.05, 0.02, -0.04]);
    std::fs::write(&src, write_xyz(&gt.apply(&template).unwrap())).unwrap();
    let out = ok(&["register", "--method", "icp", "--source", s(&src), "--template", s(&tpl), "--seed", "0"]);
    assert_eq!(out.lines().count(), 4);
    let t = Transform::from_matrix_text(&out).unwrap();
    assert!(rotation_error(&t, &gt.inverse()) < 0.1);
}

#[test]
fn bench_writes_reproducible_csvs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.cfg");
    std::fs::write(&cfg, format!("{SMALL}bench_methods = icp\nnoise_sigma_max = 0.02\n")).unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let table = ok(&["bench", "--config", s(&cfg), "--out", s(&a), "--seed", "4"]);
    assert!(table.contains("icp"));
    ok(&["bench", "--config", s(&cfg), "--out", s(&b), "--seed", "4"]);
    let read = |p: &Path, f: &str| std::fs::read_to_string(p.join(f)).unwrap();
    let records = read(&a, "records.csv");
    assert!(records.starts_with("method,pair_id,rot_err_deg,trans_err,iters,time_ms\n"));
    assert_eq!(records.lines().count(), 7);
    assert_eq!(strip_time_column(&records), strip_time_column(&read(&b, "records.csv")));
    assert_eq!(read(&a, "curves.csv"), read(&b, "curves.csv"));
    assert!(read(&a, "summary.csv").lines().count() == 2);

    let curve = d.path().join("curve.csv");
    let out = ok(&["eval", "--records", s(&a.join("records.csv")), "--curve", s(&curve), "--seed", "0"]);
    assert!(out.contains("icp"));
    assert_eq!(std::fs::read_to_string(curve).unwrap(), read(&a, "curves.csv"));
}

#[test]
fn train_then_learned_methods() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let (r1, r2) = (d.path().join("r1"), d.path().join("r2"));
    ok(&["train", "--config", s(&cfg), "--out", s(&r1), "--seed", "2"]);
    ok(&["train", "--config", s(&cfg), "--out", s(&r2), "--seed", "2"]);
    let ckpt = r1.join("model.ckpt");
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(r2.join("model.ckpt")).unwrap());
    assert_eq!(std::fs::read_to_string(r1.join("losses.csv")).unwrap().lines().count(), 3);

    let full = d.path().join("full.cfg");
    std::fs::write(
        &full,
        format!("{SMALL}bench_methods = icp, pcrnet, ipcrnet, lk\npcrnet_model = {0}\nipcrnet_model = {0}\n", s(&ckpt)),
    )
    .unwrap();
    let table = ok(&["bench", "--config", s(&full), "--out", s(&d.path().join("b")), "--seed", "1"]);
    for m in ["icp", "pcrnet", "ipcrnet", "lk"] {
        assert!(table.contains(m), "{table}");
    }

    let data = d.path().join("data");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--count", "2", "--seed", "1"]);
    let index = std::fs::read_to_string(data.join("pairs.csv")).unwrap();
    assert_eq!(index.lines().count(), 3);
    let out = ok(&[
        "register",
        "--method",
        "ipcrnet",
        "--model",
        s(&ckpt),
        "--source",
        s(&data.join("source_0000.xyz")),
        "--template",
        s(&data.join("templates/template_0.xyz")),
        "--trace",
    ]);
    assert!(Transform::from_matrix_text(&out).is_ok());
}

#[test]
fn grad_check_reports() {
    let out = ok(&["grad-check", "--scope", "linear", "--tol", "1e-6", "--seed", "1"]);
    assert!(out.lines().last().unwrap().starts_with("PASS scope=linear"));
    let bad = pcreg(&["grad-check", "--scope", "everything"]);
    assert!(!bad.status.success());
}

#[test]
fn failures_exit_nonzero_with_message() {
    let o = pcreg(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = pcreg(&["synth", "--bogus-flag"]);
    assert!(!o.status.success());

    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.cfg");
    std::fs::write(&cfg, "epochs = 1\nlerning_rate = 0.1\n").unwrap();
    let o = pcreg(&["train", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("lerning_rate"));

    let o = pcreg(&["register", "--method", "pcrnet", "--source", "x.xyz", "--template", "y.xyz"]);
    assert!(!o.status.success());
    let empty = d.path().join("e.xyz");
    std::fs::write(&empty, "").unwrap();
    let o = pcreg(&["register", "--source", s(&empty), "--template", s(&empty)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
