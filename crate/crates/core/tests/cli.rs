//! End-to-end runs of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn desorb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_desorb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = desorb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn results(dir: &Path) -> toml::Table {
    let text = fs::read_to_string(dir.join("run_manifest.toml")).unwrap();
    let manifest: toml::Table = text.parse().unwrap();
    manifest["results"].as_table().unwrap().clone()
}

fn seconds(table: &toml::Table, key: &str) -> f64 {
    let v = &table[key];
    v.as_float().or(v.as_integer().map(|i| i as f64)).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(&["--help"]);
    for cmd in [
        "simulate",
        "observe",
        "design",
        "sweep",
        "control",
        "calibrate",
        "replay",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn simulate_until_dry_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "simulate",
        "--scenario",
        "default",
        "--until-dry",
        "0.01",
        "--out-dir",
        out,
    ]);
    for file in [
        "trajectory.csv",
        "measurements.csv",
        "data_cs_avg.csv",
        "data_T_bottom.csv",
    ] {
        assert!(dir.path().join(file).is_file(), "{file} missing");
    }
    let t_dry = seconds(&results(dir.path()), "drying_time_s");
    assert!(t_dry > 7.0 * 3600.0 && t_dry < 9.0 * 3600.0, "{t_dry}");
}

#[test]
fn noisy_observer_run_replays_bit_identically() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    ok(&[
        "observe",
        "--gain-schedule",
        "-1e-6,5e-7:-1e-6,1e-7@4tau",
        "--noise-3sigma",
        "5 K",
        "--seed",
        "7",
        "--sampling-period",
        "10",
        "--out-dir",
        first.path().to_str().unwrap(),
    ]);
    let r = results(first.path());
    assert!(seconds(&r, "switch_time_s") > 0.0);
    ok(&[
        "replay",
        first.path().join("run_manifest.toml").to_str().unwrap(),
        "--out-dir",
        second.path().to_str().unwrap(),
    ]);
    for file in ["truth.csv", "measurements.csv", "estimates.csv"] {
        let a = fs::read(first.path().join(file)).unwrap();
        let b = fs::read(second.path().join(file)).unwrap();
        assert!(a == b, "{file} differs after replay");
    }
}

#[test]
fn bottom_sensor_design_reports_a_time_constant() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "design",
        "--sensor",
        "bottom",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let r = results(dir.path());
    assert!(seconds(&r, "time_constant_s") > 0.0);
    assert!(dir.path().join("eigenvalues.csv").is_file());
}

#[test]
fn sweep_covers_the_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "sweep",
        "--lt-range",
        "-1e-6:-1e-5:2",
        "--lc-range",
        "1e-7:1e-6:3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn calibration_consumes_simulated_data() {
    let sim = tempfile::tempdir().unwrap();
    let fit = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out-dir", sim.path().to_str().unwrap()]);
    ok(&[
        "calibrate",
        "--data",
        sim.path().join("data_T_bottom.csv").to_str().unwrap(),
        "--fit",
        "h",
        "--budget",
        "30",
        "--out-dir",
        fit.path().to_str().unwrap(),
    ]);
    let fitted = fit.path().join("fitted_scenario.toml");
    let s = desorb::scenario::load_scenario(fitted.to_str().unwrap()).unwrap();
    assert!(
        (s.model.heat_transfer_coeff - 30.0).abs() < 0.3,
        "{}",
        s.model.heat_transfer_coeff
    );
}

#[test]
fn bad_input_exits_with_a_categorized_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = desorb(&[
        "observe",
        "--gains",
        "fast",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[parse]"));

    let scenario = dir.path().join("flat.toml");
    fs::write(&scenario, "[model]\nheight = -0.02\ncells = 1\n").unwrap();
    let out = desorb(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[validation]"), "{stderr}");
    assert!(
        stderr.contains("height") && stderr.contains("cells"),
        "{stderr}"
    );
}
