//! Runs the built binary: outputs, exit codes and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualem"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dualem-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn plastic_stack_writes_five_rows_and_a_plot() {
    let out = scratch("plastic");
    let o = run(&[
        "--quiet",
        "--plot",
        "--out",
        out.to_str().unwrap(),
        "scenario",
        "plastic_stack",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&out.join("plastic_stack.csv")).len(), 5);
    let svg = std::fs::read_to_string(out.join("plastic_stack.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn reruns_give_identical_files() {
    let (a, b) = (scratch("rerun-a"), scratch("rerun-b"));
    for dir in [&a, &b] {
        let o = run(&[
            "--quiet",
            "--out",
            dir.to_str().unwrap(),
            "scenario",
            "copper_stack",
        ]);
        assert!(o.status.success());
    }
    let read = |d: &Path| std::fs::read(d.join("copper_stack.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn validate_passes_and_prints_a_table() {
    let o = run(&["--quiet", "validate"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn inductive_and_circuit_tables_cover_every_frequency() {
    let out = scratch("tables");
    let d = out.to_str().unwrap();
    assert!(run(&[
        "--quiet",
        "--out",
        d,
        "--set",
        "inductive.frequencies=[1e5, 1e6]",
        "inductive"
    ])
    .status
    .success());
    assert_eq!(data_rows(&out.join("inductive.csv")).len(), 2);
    assert!(run(&["--quiet", "--out", d, "circuit"]).status.success());
    assert_eq!(data_rows(&out.join("circuit.csv")).len(), 3);
}

#[test]
fn config_file_values_are_applied() {
    let out = scratch("config");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("run.toml");
    std::fs::write(&cfg, "[scenarios.plastic_stack]\nlayers = [0, 2]\n").unwrap();
    let o = run(&[
        "--quiet",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "scenario",
        "plastic_stack",
    ]);
    assert!(o.status.success());
    assert_eq!(data_rows(&out.join("plastic_stack.csv")).len(), 2);
}

#[test]
fn missing_config_exits_two_and_names_the_path() {
    let o = run(&["--config", "/definitely/not/here.toml", "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn unknown_override_key_exits_two() {
    let o = run(&["--set", "geometry.nope=1", "inductive"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("geometry.nope"));
}

#[test]
fn usage_errors_exit_sixty_four() {
    assert_eq!(run(&["--no-such-flag"]).status.code(), Some(64));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(
        run(&["scenario", "no_such_scenario"]).status.code(),
        Some(64)
    );
}

#[test]
fn help_and_version_exit_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("scenario"));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn printed_config_loads_back_unchanged() {
    let out = scratch("print");
    std::fs::create_dir_all(&out).unwrap();
    let o = run(&["--set", "geometry.n1=6", "config"]);
    assert!(o.status.success());
    let path = out.join("printed.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let again = run(&["--config", path.to_str().unwrap(), "config"]);
    assert!(again.status.success());
    assert_eq!(o.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&o.stdout).contains("n1 = 6"));
}
