use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn l2f(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2f"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr is not empty");
    serde_json::from_str(line).unwrap()
}

#[test]
fn simulate_writes_noiseless_grid() {
    let dir = TempDir::new().unwrap();
    let out = l2f(&["simulate", "--snr", "inf"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("signal.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 65);
    assert_eq!(lines[0], "time_ms,noiseless,noisy");
    assert_eq!(lines[1], "0,1,1");
    for row in &lines[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], cols[2]);
    }
    assert!(dir.path().join("simulate.config.json").exists());
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let args = ["simulate", "--snr", "1000", "--seed", "7"];
    assert!(l2f(&args, a.path()).status.success());
    assert!(l2f(&args, b.path()).status.success());
    assert!(l2f(&["simulate", "--snr", "1000", "--seed", "8"], c.path()).status.success());
    let fa = fs::read(a.path().join("signal.csv")).unwrap();
    let fb = fs::read(b.path().join("signal.csv")).unwrap();
    let fc = fs::read(c.path().join("signal.csv")).unwrap();
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn expand_reports_small_error() {
    let dir = TempDir::new().unwrap();
    let out = l2f(&["expand", "--snr", "inf", "--shift", "8"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let dump = read_json(&dir.path().join("expansion.json"));
    assert_eq!(dump["shift"].as_f64(), Some(8.0));
    assert!(dump["max_abs_error"].as_f64().unwrap() <= 1e-6);
    let rows = fs::read_to_string(dir.path().join("expansion_error.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1602);
}

#[test]
fn zero_bandwidth_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = l2f(&["expand", "--n", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "validation");
}

#[test]
fn spectrum_recovers_slow_component() {
    let dir = TempDir::new().unwrap();
    let out = l2f(&["spectrum", "--snr", "inf", "--trace"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let note = read_json(&dir.path().join("spectrum.json"));
    let trace = read_json(&dir.path().join("trace.json"));
    let t22 = note["t22_ms"].as_f64().unwrap();
    assert!((t22 - trace["t22_ms"].as_f64().unwrap()).abs() < 1e-9);
    assert!((10.0..=60.0).contains(&t22), "{t22}");
    let rows = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("x,abs_sigma"));
    assert_eq!(rows.lines().count(), 64 * 32 + 1);
}

#[test]
fn spectrum_honours_explicit_shift() {
    let dir = TempDir::new().unwrap();
    let out = l2f(&["spectrum", "--snr", "inf", "--shift", "7.5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_json(&dir.path().join("spectrum.json"))["shift"].as_f64(), Some(7.5));
    assert!(!dir.path().join("trace.json").exists());
}

#[test]
fn zero_signal_is_an_estimation_error() {
    let dir = TempDir::new().unwrap();
    let out = l2f(&["spectrum", "--model", "10,50,0,0", "--snr", "inf"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["kind"], "estimation");
}

#[test]
fn experiment_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let out = l2f(
        &["experiment", "--snr", "inf,1e4", "--realizations", "3", "--jobs", "2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[0].starts_with("method,snr,realizations,failures,nonconverged,wall_seconds"));
    assert_eq!(lines[0].split(',').count(), 18);
    for method in ["l2f", "nlls"] {
        for label in ["inf", "1e4"] {
            let path = dir.path().join(format!("records_{method}_snr_{label}.csv"));
            let records = fs::read_to_string(&path).unwrap();
            assert_eq!(records.lines().count(), 4, "{}", path.display());
        }
    }
    let dump = read_json(&dir.path().join("experiment.json"));
    assert_eq!(dump["batches"].as_array().unwrap().len(), 4);
}

#[test]
fn single_method_experiment() {
    let dir = TempDir::new().unwrap();
    let out = l2f(
        &["experiment", "--snr", "inf", "--realizations", "2", "--method", "nlls"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("nlls,inf,2,"));
}

#[test]
fn toml_config_is_applied_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "model = [10.0, 40.0, 0.5, 0.5]\nsnr = \"inf\"\nshift = 7.0\n").unwrap();
    let out = l2f(
        &["spectrum", "--config", cfg.to_str().unwrap(), "--shift", "8"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let note = read_json(&dir.path().join("spectrum.json"));
    assert_eq!(note["shift"].as_f64(), Some(8.0));
    assert!((note["t22_ms"].as_f64().unwrap() - 40.0).abs() < 0.5);
    let echoed = read_json(&dir.path().join("spectrum.config.json"));
    assert_eq!(echoed["model"][1].as_f64(), Some(40.0));
}

#[test]
fn json_config_round_trips_through_echo() {
    let dir = TempDir::new().unwrap();
    assert!(l2f(&["simulate", "--seed", "3", "--snr", "500"], dir.path()).status.success());
    let echoed = dir.path().join("simulate.config.json");
    let again = TempDir::new().unwrap();
    let out = l2f(&["simulate", "--config", echoed.to_str().unwrap()], again.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(dir.path().join("signal.csv")).unwrap(),
        fs::read(again.path().join("signal.csv")).unwrap()
    );
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"realisations": 5}"#).unwrap();
    let out = l2f(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = l2f(&["simulate"], &blocker.join("sub"));
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["kind"], "io");
}
