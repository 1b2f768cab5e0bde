//! End-to-end runs of the `twosize` binary and the config/manifest layer.

use std::path::Path;
use std::process::Command as Proc;

use twosize::{RhoSpec, SizeParams, StoppingRule};
use twosize_cli::output::manifest_path;
use twosize_cli::{load_config, render, run, Command, ExperimentConfig, Format, OutputSpec, RunManifest};

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_twosize"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn renewal_law_csv_matches_enumeration() {
    let out = bin().args(["renewal", "--p", "0.5", "--theta", "1/2", "--R", "1", "--seed", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.remove(0), "k_small,k_large,prob");
    lines.sort();
    assert_eq!(lines, vec!["0,1,5.0000000000000000e-1", "1,1,2.5000000000000000e-1", "2,0,2.5000000000000000e-1",]);
}

#[test]
fn strict_renewal_law_keeps_pre_crossing_generation() {
    let out = bin()
        .args(["renewal", "--p", "0.5", "--theta", "1/2", "--R", "1", "--strict", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows: Vec<&str> = text.lines().skip(1).collect();
    rows.sort();
    assert_eq!(rows, vec!["0,1,5.0000000000000000e-1", "1,0,2.5000000000000000e-1", "2,0,2.5000000000000000e-1",]);
}

#[test]
fn analytics_extinction_neutral_identity() {
    let out = bin()
        .args(["analytics", "extinction", "--theta", "0.5", "--s", "0.5", "--grid", "5", "--seed", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((cells[1] - (1.0 - cells[0])).abs() < 1e-12, "{line}");
    }
}

#[test]
fn errors_are_reported_as_json_with_nonzero_exit() {
    let out = bin().args(["simulate", "--theta", "1.5", "--seed", "1"]).output().unwrap();
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "model");

    let out = bin().args(["simulate"]).output().unwrap();
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "config");
}

#[test]
fn manifest_round_trips_and_reproduces_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("traj.csv");
    let out = bin()
        .args(["simulate", "--theta", "3/10", "--R", "40", "--x0", "0.5", "--gens", "50", "--reps", "3", "--seed", "7"])
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = read(&data);
    assert!(first.starts_with("rep,gen,x_freq,m_size\n"));
    assert_eq!(first.lines().count(), 1 + 3 * 51);

    let manifest_file = manifest_path(&data);
    let manifest: RunManifest = serde_json::from_str(&read(&manifest_file)).unwrap();
    assert_eq!(manifest.root_seed, 7);
    assert_eq!(manifest.rows, 3 * 51);
    let reloaded = load_config(&manifest_file).unwrap();
    assert_eq!(reloaded, manifest.config);

    let again = dir.path().join("again.csv");
    let out = bin().arg("run").arg(&manifest_file).arg("--out").arg(&again).output().unwrap();
    assert!(out.status.success());
    assert_eq!(read(&again), first);
}

#[test]
fn json_config_file_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("scan.json");
    std::fs::write(
        &cfg_path,
        r#"{"command": {"kind": "drift_scan", "grid": 3, "nsim": 10, "order": 1, "method": "exact_dp"},
            "params": {"theta": "1/2", "resources": 1}, "seed": 3}"#,
    )
    .unwrap();
    let out = bin().arg("run").arg(&cfg_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mid: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(mid[0].parse::<f64>().unwrap(), 0.5);
    assert!((mid[2].parse::<f64>().unwrap() + 0.125).abs() < 1e-15);
    assert_eq!(mid[5], "exact-dp");
}

fn config(command: Command) -> ExperimentConfig {
    ExperimentConfig {
        command,
        params: SizeParams::new(0.4, 30.0).unwrap(),
        rho: RhoSpec::mutation(0.5, 0.5),
        seed: 11,
        output: OutputSpec { path: None, format: Format::Csv },
        threads: None,
    }
}

#[test]
fn seed_changes_output_and_is_reproducible() {
    let cfg = config(Command::Simulate { x0: 0.3, gens: 40, reps: 5, rule: StoppingRule::Strict });
    let a = render(&cfg).unwrap().bytes;
    assert_eq!(a, render(&cfg).unwrap().bytes);
    let mut other = cfg.clone();
    other.seed = 12;
    assert_ne!(a, render(&other).unwrap().bytes);
}

#[test]
fn json_output_parses() {
    let mut cfg =
        config(Command::Sde { x0: 0.5, h: 0.01, t_end: 0.1, reps: 2, rule: StoppingRule::NonStrict, max_t: None });
    cfg.output.format = Format::Json;
    let bytes = render(&cfg).unwrap().bytes;
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn run_writes_atomically_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Command::Renewal { p: 0.3, rule: StoppingRule::NonStrict });
    cfg.output.path = Some(dir.path().join("law.csv"));
    run(&cfg).unwrap();
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, vec!["law.csv", "law.csv.manifest.json"]);
}

#[test]
fn validate_subcommand_reports_and_exits_zero() {
    let out = bin().args(["validate", "--only", "8", "--seed", "1"]).output().unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("criterion  8 (wald and reverse martingale): PASS"), "{stderr}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("criterion,seed,passed,detail\n8,,true,"));
}

#[test]
fn small_resource_trajectories_have_one_row_per_generation() {
    let out = bin()
        .args(["simulate", "--theta", "0.3", "--R", "5", "--rho", "neutral", "--x0", "0.5", "--gens", "100"])
        .args(["--reps", "6", "--seed", "42"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 101);
    for line in text.lines().skip(1) {
        let x: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&x));
    }
}

#[test]
fn analytics_needs_no_seed() {
    let out = bin().args(["analytics", "extinction", "--theta", "0.5", "--s", "0", "--grid", "101"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mid: Vec<f64> = text.lines().nth(51).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(mid[0], 0.5);
    assert!((mid[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn repeated_seeds_rerun_monte_carlo_criteria() {
    let out = bin().args(["validate", "--only", "1", "--seed", "1", "--seed", "2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.splitn(4, ',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1], rows[1][1]), ("1", "2"));
    assert!(rows.iter().all(|r| r[2] == "true"));
    assert_ne!(rows[0][3], rows[1][3]);

    let out = bin().args(["drift-scan", "--seed", "1", "--seed", "2"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn validate_group_selection() {
    let out = bin().args(["validate", "--only", "renewal", "--seed", "5"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, vec!["6", "7", "8"]);
    let out = bin().args(["validate", "--only", "plotting", "--seed", "5"]).output().unwrap();
    assert!(!out.status.success());
}
