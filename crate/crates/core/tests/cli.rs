//! End-to-end runs of the `bzsim` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bzsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bzsim")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_run(experiment: &str, out: &Path, extra: &str) -> String {
    format!(
        "experiment = {experiment}\n[grid]\nn_points = 4096\nx_min = -512pi\nx_max = 512pi\ndt_per_TB = 256\n{extra}[output]\ndir = {}\nstride = 64\n",
        out.display()
    )
}

#[test]
fn missing_config_is_an_input_error() {
    let out = bzsim(&["run", "definitely-missing.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("definitely-missing.conf"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.conf", "experiment = bloch\n[params]\nwibble = 3\n");
    let out = bzsim(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(bzsim(&["--help"]).status.code(), Some(0));
    assert_eq!(bzsim(&["frobnicate"]).status.code(), Some(1));
    let presets = bzsim(&["presets"]);
    assert!(presets.status.success());
    let text = String::from_utf8_lossy(&presets.stdout);
    for name in ["bloch", "shuttle", "mzi_v0_sweep", "gpe_g_sweep", "tb_dispersion"] {
        assert!(text.contains(name), "{name} missing from presets");
    }
}

fn read_bands(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("kappa"))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn folded_bands_touch_at_the_zone_edge() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bands.csv");
    let out = bzsim(&["bands", "--eps", "0", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_bands(&csv);
    let edge = rows.iter().find(|r| (r[0] + 0.25).abs() < 1e-12).expect("edge row");
    assert!((edge[2] - edge[1]).abs() < 1e-8);

    let out = bzsim(&["bands", "--eps", "-0.121", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = read_bands(&csv);
    let edge = rows.iter().find(|r| (r[0] + 0.25).abs() < 1e-12).unwrap();
    assert!(edge[2] - edge[1] > 0.01);
}

#[test]
fn identical_configs_give_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let cfg = write_config(dir.path(), "run.conf", &small_run("bloch", out, ""));
        let res = bzsim(&["run", &cfg]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for name in ["moments.csv", "moments_tracked.csv", "intervals.csv", "density.bin"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status = complete"));
    assert!(manifest.contains("file = density.bin sha256="));

    let cfg = write_config(dir.path(), "run.conf", &small_run("bloch", &a, ""));
    let res = bzsim(&["run", "--verify", &cfg]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("verify: ok"));
}

#[test]
fn sweeps_do_not_depend_on_evaluation_order() {
    let dir = TempDir::new().unwrap();
    let (par, seq) = (dir.path().join("par"), dir.path().join("seq"));
    let sweep = "[sweep]\nvariable = eps\nstart = -0.1\nstop = 0.1\nn = 4\n";
    let cfg = write_config(dir.path(), "par.conf", &small_run("eps_sweep", &par, sweep));
    assert!(bzsim(&["run", &cfg]).status.success());
    let cfg = write_config(dir.path(), "seq.conf", &small_run("eps_sweep", &seq, sweep));
    assert!(bzsim(&["--sequential", "run", &cfg]).status.success());
    let table = fs::read(par.join("sweep.csv")).unwrap();
    assert_eq!(table, fs::read(seq.join("sweep.csv")).unwrap());
    let rows = String::from_utf8(table).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 5);
}

#[test]
fn failed_run_leaves_an_incomplete_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fail");
    // the branch intervals reach past x = -402
    let body = format!(
        "experiment = eps_sweep\n[grid]\nn_points = 1024\nx_min = -128pi\nx_max = 128pi\ndt_per_TB = 64\n\
         [sweep]\nvariable = eps\nstart = 0\nstop = 0.1\nn = 2\n[output]\ndir = {}\n",
        out.display()
    );
    let cfg = write_config(dir.path(), "fail.conf", &body);
    let res = bzsim(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status = incomplete"));
    assert!(manifest.contains("error = "));
}

#[test]
fn sweep_variable_must_match_the_experiment() {
    let dir = TempDir::new().unwrap();
    let body = small_run("mzi_v0_sweep", &dir.path().join("x"), "[sweep]\nvariable = g\nstart = 0\nstop = 1\nn = 2\n");
    let cfg = write_config(dir.path(), "mismatch.conf", &body);
    assert_eq!(bzsim(&["run", &cfg]).status.code(), Some(1));
}
