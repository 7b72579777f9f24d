use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5
mc_samples = 2000
[grid]
periods_per_day = 24
days = 1
[fleet]
agents = 3
[history]
days = 2
[assa]
sigma0 = 2e-4
"#;

fn mgtrade(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgtrade"))
        .args(args)
        .current_dir(dir)
        .env_remove("MGTRADE_OUT")
        .env_remove("MGTRADE_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn minimal_run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = mgtrade(&["--config", &cfg, "--out", "rep"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "metrics.json", "equilibria.csv", "timing.json"] {
        assert!(dir.path().join("rep").join(f).is_file(), "{f}");
    }
    let trace = fs::read_to_string(dir.path().join("rep/trace.csv")).unwrap();
    assert!(trace.starts_with("day,interval,p2p_price,p_grid_kw,iterations,mg1_pex_kw,mg1_soc,mg1_cost"));
    assert_eq!(trace.lines().count(), 25);
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[market]\nmode = \"price_taker\"\nprices_file = \"absent.csv\"\n"));
    let out = mgtrade(&["--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["error"], "config");
    assert!(v["reason"].as_str().unwrap().contains("absent.csv"));
}

#[test]
fn bad_values_map_to_config_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[[strategies]]\nkind = \"ddoo\"\ntau = -1.0\n"));
    assert_eq!(mgtrade(&["--config", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(mgtrade(&["--preset", "nope"], dir.path()).status.code(), Some(2));
}

#[test]
fn malformed_history_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("h.csv"), "day,interval,net_load_kw,price_per_kwh\n0,0,abc,0.1\n").unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("days = 2", "files = [\"h.csv\"]"));
    let out = mgtrade(&["--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn same_config_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for (out, threads) in [("a", "1"), ("b", "3")] {
        let o = mgtrade(&["--config", &cfg, "--out", out, "--threads", threads], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/metrics.json")).unwrap();
    let b = fs::read(dir.path().join("b/metrics.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn env_overrides_out_dir_but_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |extra: &[&str]| {
        let mut args = vec!["--config", cfg.as_str()];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_mgtrade")).args(&args).current_dir(dir.path()).env("MGTRADE_OUT", dir.path().join("env")).output().unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(dir.path().join("env/metrics.json").is_file());
    assert!(run(&["--out", "flag"]).status.success());
    assert!(dir.path().join("flag/metrics.json").is_file());
}

#[test]
fn preset_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\nmc_samples = 2000\n[experiment]\nagents = 3\ndays = 1\nperiods_per_day = 24\nagent = 1\nhistory_days = 2\n");
    let out = mgtrade(&["--config", &cfg, "--preset", "case-compare", "--out", "x"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("x/case-compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}
