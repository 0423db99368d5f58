use std::path::Path;
use std::process::{Command, Output};

use nvsim::config::{targets_to_toml, SimConfig};
use nvsim::dynamics::CalibrationTargets;

fn nvsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("NVSIM_MODEL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const PROGRAM: &str = "NAME herald\nSEED 11\nPUMP pm1 40us\nMW 2874.0MHz 0.2MHz pi\nREAD 0.4us >=1 h 4.8nW\nCONDITION h counts>=1\nPUMP ms0 10us\nREAD 40us >=1 r\n";

#[test]
fn calibrate_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.toml"), targets_to_toml(&CalibrationTargets::default()).unwrap()).unwrap();
    let o = nvsim(&["calibrate", "t.toml", "-o", "m.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = SimConfig::load(&dir.path().join("m.toml")).unwrap();
    assert!((cfg.rates.exc_max_ex - 18.5689).abs() / 18.5689 < 1e-3);
}

#[test]
fn run_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.seq"), PROGRAM).unwrap();
    let a = nvsim(&["run", "p.seq", "--shots", "300", "--threads", "1", "-o", "a"], dir.path());
    let b = nvsim(&["run", "p.seq", "--shots", "300", "--threads", "8", "-o", "b"], dir.path());
    assert!(a.status.success() && b.status.success());
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "shots.csv"), read("b", "shots.csv"));
    assert_eq!(read("a", "summary.json"), read("b", "summary.json"));
    let summary: serde_json::Value = serde_json::from_slice(&read("a", "summary.json")).unwrap();
    assert_eq!(summary["seed"], 11);
    assert_eq!(summary["n_shots"], 300);
}

#[test]
fn seed_flag_overrides_program_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.seq"), PROGRAM).unwrap();
    let a = nvsim(&["run", "p.seq", "--shots", "50"], dir.path());
    let b = nvsim(&["run", "p.seq", "--shots", "50", "--seed", "12"], dir.path());
    assert_ne!(stdout(&a), stdout(&b));
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.seq"), "PUMP ms0 10us\nCONDITION x counts>=1\n").unwrap();
    std::fs::write(dir.path().join("far.seq"), "MW 2950MHz 1MHz pi\n").unwrap();
    std::fs::write(dir.path().join("bad.toml"), "exc_max_ex = \"fast\"\n").unwrap();
    assert_eq!(nvsim(&["nonsense"], dir.path()).status.code(), Some(2));
    assert_eq!(nvsim(&["run", "missing.seq"], dir.path()).status.code(), Some(3));
    let o = nvsim(&["run", "bad.seq"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.seq:2:"));
    assert_eq!(nvsim(&["run", "far.seq", "--model", "bad.toml"], dir.path()).status.code(), Some(3));
    assert_eq!(nvsim(&["run", "far.seq", "--strict", "--shots", "1"], dir.path()).status.code(), Some(4));
    assert_eq!(nvsim(&["run", "far.seq", "--shots", "1"], dir.path()).status.code(), Some(0));
}

#[test]
fn model_argument_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "exc_max_ex = \"fast\"\n").unwrap();
    let good = SimConfig::default();
    std::fs::write(dir.path().join("good.toml"), good.to_toml().unwrap()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nvsim"))
        .args(["oracle", "good.toml", "--duration", "10us"])
        .current_dir(dir.path())
        .env("NVSIM_MODEL", "bad.toml")
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_nvsim"))
        .args(["oracle", "--duration", "10us"])
        .current_dir(dir.path())
        .env("NVSIM_MODEL", "bad.toml")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn oracle_table_is_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvsim(&["oracle", "--state", "ms-1", "--duration", "40us", "--n-max", "60"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("count,probability"));
    let total: f64 = lines.map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!(total <= 1.0 + 1e-12 && total > 0.999, "{total}");
}

#[test]
fn spectrum_and_optimize_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvsim(&["spectrum", "--from", "2873MHz", "--to", "2875MHz", "--step", "0.5MHz", "--shots", "20"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("x,y,y_err"));
    assert_eq!(text.lines().count(), 6);
    let o = nvsim(&["optimize", "--shots", "500", "-o", "w.json"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
    assert!(v["exact"]["f_avg"].as_f64().unwrap() > 0.9);
    let o = nvsim(&["spectrum", "--from", "2873MHz"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_rows_cover_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvsim(&["sweep", "--shots", "10", "--rf-steps", "3", "--mw-steps", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1 + 3 * 2);
}
