use std::fs;
use std::process::{Command, Output};

fn dualq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualq"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn demo_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualq(&[
        "demo",
        "link",
        "--steps",
        "50",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("link_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.starts_with("k,"));
    let summary = fs::read_to_string(dir.path().join("link_seed3_summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 3"));
}

#[test]
fn jsonlines_format_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualq(&[
        "demo",
        "fig2",
        "--steps",
        "20",
        "--format",
        "jsonlines",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n.ends_with(".jsonl")), "{names:?}");
}

#[test]
fn run_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    fs::write(
        &cfg,
        "[scenario]\nid = \"custom\"\nsteps = 100\n[problem]\nbuiltin = \"toy\"\n[preset]\nname = \"exact_dual\"\nalpha = 0.05\n",
    )
    .unwrap();
    let out = dualq(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--strict",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("f_avg"));
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[scenario]\nid = \"unsync\"\n[problem]\nb = [0.5, 9.0]\n").unwrap();
    assert_eq!(dualq(&["validate", cfg.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&cfg, "[scenario]\nid = \"link\"\nbogus = 1\n").unwrap();
    assert_eq!(dualq(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn strict_bound_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    fs::write(
        &cfg,
        "[scenario]\nid = \"link\"\nsteps = 100\n[preset]\nsigma0 = 0.001\n",
    )
    .unwrap();
    let args = ["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    assert_eq!(dualq(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(dualq(&strict).status.code(), Some(3));
}

#[test]
fn validate_reports_sigma0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("link.toml");
    fs::write(&cfg, "[scenario]\nid = \"link\"\n").unwrap();
    let out = dualq(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sigma0"));
}
