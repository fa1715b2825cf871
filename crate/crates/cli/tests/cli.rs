use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use drumshape::dataset::{decode_dataset, encode_dataset};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_drumshape"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Coarse-mesh config so that generation takes well under a second per
/// record.
fn coarse_config(dir: &Path) -> String {
    let p = dir.join("coarse.txt");
    fs::write(&p, "fem_h = 0.3\nextrapolate = false\n").unwrap();
    p.display().to_string()
}

fn gen(dir: &Path, name: &str, count: usize, seed: u64) -> String {
    let out = dir.join(name).display().to_string();
    let cfg = coarse_config(dir);
    let o = run(&[
        "gen",
        "--config",
        &cfg,
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn version_lists_formats() {
    let o = run(&["--version"]);
    assert!(o.status.success());
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.contains("dataset format 1"), "{s}");
    assert!(s.contains("checkpoint format 1"), "{s}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["gen"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gen_is_deterministic_and_echoes_config() {
    let d = tempfile::tempdir().unwrap();
    let a = gen(d.path(), "a.sdrm", 6, 7);
    let b = gen(d.path(), "b.sdrm", 6, 7);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let echo = fs::read_to_string(format!("{a}.config.txt")).unwrap();
    assert!(echo.contains("seed = 7"), "{echo}");
    assert!(echo.contains("fem_h = 0.3"), "{echo}");
    let o = run(&["verify", "--data", &a]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_zero_gives_valid_empty_dataset() {
    let d = tempfile::tempdir().unwrap();
    let p = gen(d.path(), "empty.sdrm", 0, 1);
    let ds = decode_dataset(&fs::read(&p).unwrap()).unwrap();
    assert!(ds.records.is_empty());
    assert!(run(&["verify", "--data", &p]).status.success());
}

#[test]
fn invalid_angle_bounds_name_the_field() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.txt");
    fs::write(&cfg, "gap_min = 2.5\ngap_max = 1.0\n").unwrap();
    let out = d.path().join("x.sdrm");
    let o = run(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--count",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gap_"), "{}", stderr(&o));
    fs::write(&cfg, "fem_h = nope\n").unwrap();
    let o = run(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--count",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fem_h"), "{}", stderr(&o));
}

#[test]
fn verify_names_corrupted_record() {
    let d = tempfile::tempdir().unwrap();
    let p = gen(d.path(), "c.sdrm", 4, 3);
    let mut ds = decode_dataset(&fs::read(&p).unwrap()).unwrap();
    ds.records[2].weyl.a *= 1.01;
    fs::write(
        &p,
        encode_dataset(&ds.header.config, ds.header.n_eigs, &ds.records),
    )
    .unwrap();
    let o = run(&["verify", "--data", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("record 2"), "{}", stderr(&o));
    let mut bytes = fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 5);
    fs::write(&p, bytes).unwrap();
    assert_eq!(run(&["verify", "--data", &p]).status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let o = run(&[
        "eval",
        "--checkpoint",
        "/nonexistent.ckpt",
        "--data",
        "/nonexistent.sdrm",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        run(&["verify", "--data", "/nonexistent.sdrm"])
            .status
            .code(),
        Some(1)
    );
}

fn train_into(data: &str, out: &Path) {
    let o = run(&[
        "--threads",
        "1",
        "train",
        "--data",
        data,
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--encoder",
        "dense",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn eval_into(ckpt: &Path, data: &str, out: &Path) {
    let o = run(&[
        "--threads",
        "1",
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data,
        "--baseline-data",
        data,
        "--rotation-worst",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn same_files(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n} differs"
        );
    }
}

#[test]
fn pipeline_is_deterministic_single_threaded() {
    let d = tempfile::tempdir().unwrap();
    let data = gen(d.path(), "train.sdrm", 12, 11);
    let (t1, t2) = (d.path().join("t1"), d.path().join("t2"));
    train_into(&data, &t1);
    train_into(&data, &t2);
    same_files(
        &t1,
        &t2,
        &[
            "train_log.csv",
            "final.ckpt",
            "best.ckpt",
            "config.txt",
            "split.csv",
        ],
    );
    let log = fs::read_to_string(t1.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,lr\n"));
    assert_eq!(log.lines().count(), 3);

    let (e1, e2) = (d.path().join("e1"), d.path().join("e2"));
    eval_into(&t1.join("best.ckpt"), &data, &e1);
    eval_into(&t1.join("best.ckpt"), &data, &e2);
    let outputs = [
        "losses.csv",
        "cdf.csv",
        "summary.csv",
        "good_pred.pgm",
        "mediocre_pred.pgm",
        "bad_pred.pgm",
        "good_true.pgm",
        "weyl_preservation.csv",
        "rotation.csv",
        "baseline.pgm",
        "config.txt",
    ];
    same_files(&e1, &e2, &outputs);
    let summary = fs::read_to_string(e1.join("summary.csv")).unwrap();
    assert!(summary.contains("mean_loss,") && summary.contains("baseline_mean_loss,"));

    let s = d.path().join("s");
    let o = run(&[
        "scale-exp",
        "--checkpoint",
        t1.join("best.ckpt").to_str().unwrap(),
        "--data",
        &data,
        "--s",
        "0.5,1.0,1.5,2.0,2.5",
        "--out",
        s.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(s.join("scaling.csv")).unwrap();
    assert!(csv.starts_with("s,mean_area,exponent\n"));
    assert_eq!(csv.lines().count(), 6);

    let p = d.path().join("p");
    let o = run(&[
        "probe",
        "--checkpoint",
        t1.join("best.ckpt").to_str().unwrap(),
        "--data",
        &data,
        "--hidden",
        "0,1",
        "--epochs",
        "3",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("probe_errors.csv")).unwrap();
    for t in ["weyl", "vertices", "edges_angles"] {
        assert!(csv.contains(&format!("{t},1,mean,")), "{csv}");
    }
    assert!(p.join("probe_scaling.csv").exists());
    let o = run(&[
        "probe",
        "--checkpoint",
        t1.join("best.ckpt").to_str().unwrap(),
        "--data",
        &data,
        "--targets",
        "colour",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn export_writes_tables_and_images() {
    let d = tempfile::tempdir().unwrap();
    let data = gen(d.path(), "x.sdrm", 3, 5);
    let out = d.path().join("ex");
    let o = run(&[
        "export",
        "--data",
        &data,
        "--images",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "spectra.csv",
        "weyl.csv",
        "vertices.csv",
        "image_000000.pgm",
        "image_000001.pgm",
        "config.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("image_000002.pgm").exists());
}

#[test]
fn fem_validate_coarse_uses_relaxed_tolerance() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&[
        "fem-validate",
        "--h",
        "0.2",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}{}", stderr(&o));
    assert!(stdout.contains("tolerance = 0.06"), "{stdout}");
    let csv = fs::read_to_string(d.path().join("fem_validate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 + 1 + 20);
    assert_eq!(run(&["fem-validate", "--h", "-1"]).status.code(), Some(2));
}
