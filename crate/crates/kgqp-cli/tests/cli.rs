use std::path::Path;
use std::process::{Command, Output};

fn kgqp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgqp"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("KGQP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn table(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let hash = lines.next().unwrap().to_string();
    lines.next().unwrap();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (hash, rows)
}

#[test]
fn free_spectrum_is_chebyshev() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgqp(dir.path(), &["spectrum", "--sites", "64", "--eps", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (hash, rows) = table(&dir.path().join("spectrum.csv"));
    assert!(hash.starts_with("# config-hash: "));
    assert_eq!(rows.len(), 64);
    for (k, r) in rows.iter().enumerate() {
        let want = -2.0 * ((k + 1) as f64 * std::f64::consts::PI / 65.0).cos();
        assert!((r[1] - want).abs() < 1e-12);
    }
    assert!(dir.path().join("spectrum.manifest.json").exists());
}

#[test]
fn free_rotation_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgqp(dir.path(), &["rotation", "--egrid", "-2:2:101", "--eps", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = table(&dir.path().join("rotation.csv"));
    assert_eq!(rows.len(), 101);
    for r in rows {
        assert!((r[1] - (-r[0] / 2.0).acos()).abs() < 1e-3, "{r:?}");
    }
}

#[test]
fn decay_reports_an_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgqp(dir.path(), &["decay", "--eps", "1e-3", "--tmax", "1000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("decay.json")).unwrap()).unwrap();
    let e = v["fit"]["exponent"].as_f64().unwrap();
    assert!(e < -0.25 && e > -0.45, "exponent {e}");
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kgqp(dir.path(), &["spectrum", "--sites", "2"]).status.code(), Some(1));
    assert_eq!(kgqp(dir.path(), &["rotation", "--egrid", "1:0:3"]).status.code(), Some(1));
    assert_eq!(kgqp(dir.path(), &["frobnicate"]).status.code(), Some(1));
    let blowup = kgqp(dir.path(), &["evolve", "--set", "lambda=50", "--tmax", "20", "--set", "dt=0.05"]);
    assert_eq!(blowup.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "sites = 32\nsigmma = 0.01\n").unwrap();
    let out = kgqp(dir.path(), &["spectrum", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sigmma") && err.contains('2'), "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["kam", "--eps", "1e-3", "--egrid", "-1:1:5", "--seed", "7"];
    assert!(kgqp(a.path(), &args).status.success());
    assert!(kgqp(b.path(), &args).status.success());
    for f in ["kam.csv", "kam.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn env_var_selects_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kgqp"))
        .args(["spectrum", "--sites", "16"])
        .env("KGQP_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("spectrum.csv").exists());
}
