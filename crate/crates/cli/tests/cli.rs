//! The `lpx` binary: exit codes, file layout and output invariants.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lpx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpx")).args(args).env("RUST_LOG", "warn").output().expect("run lpx")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lpx-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_config_validates() {
    let out = scratch("validate");
    let o = lpx(&["validate", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("validation.csv"));
    let (kind, pass) = (column(&h, "kind"), column(&h, "pass"));
    assert!(rows.iter().filter(|r| r[kind] == "check").all(|r| r[pass] == "true"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"][0]["path"], "validation.csv");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    std::fs::remove_dir_all(out).unwrap();
}

#[test]
fn load_errors_exit_with_one() {
    let dir = scratch("bad");
    let one_d = write_config(&dir, "models = [{ family = \"stable\", alpha = 1.0 }]\nfield = { kind = \"identity\" }\n");
    let o = lpx(&["validate", "--config", one_d.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least two coordinates"));
    let z2 = write_config(
        &dir,
        "mode = \"z2\"\nmodels = [{ family = \"stable\", alpha = 0.5 }, { family = \"stable\", alpha = 1.5 }]\nfield = { kind = \"identity\" }\n",
    );
    let o = lpx(&["validate", "--config", z2.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let typo = write_config(&dir, "models = []\nfield = { kind = \"identity\" }\n[mesh]\nd_x = 0.1\n");
    let o = lpx(&["validate", "--config", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn missing_config_is_an_io_error() {
    let o = lpx(&["density", "--config", "/nonexistent/lpx.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn density_files_carry_the_mass_column() {
    let out = scratch("density");
    let o = lpx(&["density", "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..2 {
        let path = out.join(format!("density_coord{i}.csv"));
        let body = std::fs::read(&path).unwrap();
        assert!(!body.contains(&b'\r'));
        let (h, rows) = read_csv(&path);
        let m = column(&h, "mass_defect");
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r[m].parse::<f64>().unwrap() <= 1e-6));
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    std::fs::remove_dir_all(out).unwrap();
}

#[test]
fn constant_field_kernel_has_vanishing_q0() {
    let out = scratch("kernel");
    let o = lpx(&["kernel", "--config", &fixture("constant_small.toml"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("kernel.csv"));
    let (q, u) = (column(&h, "q0_max_scaled"), column(&h, "u_minus_p_rel"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r[q].parse::<f64>().unwrap() <= 1e-8);
        assert!(r[u].parse::<f64>().unwrap() <= 1e-6);
    }
    assert!(out.join("picard.csv").exists());
    std::fs::remove_dir_all(out).unwrap();
}
