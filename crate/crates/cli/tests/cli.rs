use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sweepdemod"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every file in the reference directory must be reproduced byte for byte.
fn assert_matches_reference(name: &str, out: &Path) {
    let reference = configs().join("reference").join(name);
    let mut files: Vec<_> = fs::read_dir(&reference).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no reference files for {name}");
    for f in files {
        let file = f.file_name().unwrap();
        let got = fs::read(out.join(file)).unwrap_or_else(|e| panic!("{name}/{}: {e}", file.to_string_lossy()));
        assert!(
            got == fs::read(&f).unwrap(),
            "{name}/{} differs from the reference",
            file.to_string_lossy()
        );
    }
}

fn rerun(name: &str, subcommand: &str) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join(format!("{name}.toml"));
    assert_ok(&run(&[
        subcommand,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    assert_matches_reference(name, dir.path());
}

#[test]
fn sensitivity_config_reproduces_reference() {
    rerun("sensitivity", "bench-sensitivity");
}

#[test]
fn tracking_configs_reproduce_reference() {
    rerun("tracking", "track");
    rerun("tracking_open_loop", "track");
}

#[test]
fn scan_config_reproduces_reference() {
    rerun("scan", "scan");
}

#[test]
fn gradient_config_reproduces_reference() {
    rerun("gradient", "gradient");
}

#[test]
fn theory_config_reproduces_reference() {
    rerun("theory", "theory");
}

#[test]
fn simulate_then_demod_reproduces_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = configs().join("roundtrip.toml");
    let cfg = cfg.to_str().unwrap();
    assert_ok(&run(&["simulate", "--config", cfg, "--out", out]));
    let trace = dir.path().join("trace.bin");
    assert_ok(&run(&["demod", "--config", cfg, "--out", out, "--input", trace.to_str().unwrap()]));
    assert_matches_reference("roundtrip", dir.path());
}

#[test]
fn csv_and_binary_traces_demodulate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = configs().join("roundtrip.toml");
    let cfg = cfg.to_str().unwrap();
    assert_ok(&run(&["simulate", "--config", cfg, "--out", out]));
    let mut tables = Vec::new();
    for input in ["trace.csv", "trace.bin"] {
        let sub = dir.path().join(input.replace('.', "_"));
        let input = dir.path().join(input);
        assert_ok(&run(&[
            "demod",
            "--config",
            cfg,
            "--out",
            sub.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
        ]));
        tables.push(fs::read_to_string(sub.join("estimates.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn resolved_config_records_overrides_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = configs().join("theory.toml");
    assert_ok(&run(&[
        "theory",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out,
        "--seed",
        "99",
        "--estimator",
        "lstsq",
    ]));
    let resolved = dir.path().join("resolved_config.toml");
    let text = fs::read_to_string(&resolved).unwrap();
    assert!(text.contains("seed = 99"), "{text}");
    assert!(text.contains("kind = \"lstsq\""), "{text}");

    let again = dir.path().join("again");
    assert_ok(&run(&[
        "theory",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]));
    assert_eq!(text, fs::read_to_string(again.join("resolved_config.toml")).unwrap());
}

#[test]
fn seed_override_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_ok(&run(&["simulate", "--seed", "1", "--out", a.to_str().unwrap()]));
    assert_ok(&run(&["simulate", "--seed", "2", "--out", b.to_str().unwrap()]));
    assert_ne!(
        fs::read(a.join("trace.csv")).unwrap(),
        fs::read(b.join("trace.csv")).unwrap()
    );
}

fn exit_code_with_config(subcommand: &str, toml: &str) -> Option<i32> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, toml).unwrap();
    let out = dir.path().join("out");
    run(&[subcommand, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .code()
}

#[test]
fn unknown_key_is_a_config_error() {
    assert_eq!(exit_code_with_config("theory", "[probe]\nlinewidth = 3e6\n"), Some(2));
}

#[test]
fn malformed_toml_is_a_config_error() {
    assert_eq!(exit_code_with_config("theory", "[probe\n"), Some(2));
}

#[test]
fn invalid_parameters_are_config_errors() {
    assert_eq!(exit_code_with_config("simulate", "[trace]\nduration = -1.0\n"), Some(2));
    assert_eq!(exit_code_with_config("simulate", "[probe]\ngamma = 0.0\n"), Some(2));
    assert_eq!(exit_code_with_config("simulate", "[sweep]\nf_mod = 40e3\n"), Some(2));
}

#[test]
fn zero_oscillation_amplitude_is_a_numerical_failure() {
    assert_eq!(exit_code_with_config("gradient", "[gradient]\nx0 = 0.0\n"), Some(3));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "demod",
        "--input",
        dir.path().join("absent.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "theory",
        "--config",
        dir.path().join("nope.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
