use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smartgrid"));
    c.env_remove("SMARTGRID_OUT");
    c
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn verify_passes_every_check() {
    let o = run(&["verify"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS utility")).count(), 22);
    assert!(text.contains("PASS final consumption"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn run_without_scenario_is_usage_error() {
    let o = run(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(run(&["verify", "--bogus"]).status.code(), Some(2));
}

#[test]
fn run_writes_manifest_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let path = scenario("reference.json");
    let o = run(&["run", "--scenario", path.to_str().unwrap(), "--ticks", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ticks = fs::read_to_string(out.join("ticks.csv")).unwrap();
    assert_eq!(ticks.lines().count(), 6);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario_sha256"], smartgrid::io::sha256_hex(&fs::read(&path).unwrap()));
    assert_eq!(manifest["horizon"], 5);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("reference_capped.json");
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["run", "--scenario", path.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let a = read_dir_sorted(&dir.path().join("a"));
    let b = read_dir_sorted(&dir.path().join("b"));
    // manifests differ only in the output directory
    let data = |v: &[(String, Vec<u8>)]| v.iter().filter(|(n, _)| n.ends_with(".csv")).cloned().collect::<Vec<_>>();
    assert_eq!(data(&a), data(&b));
    assert_eq!(data(&a).len(), 3);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("reference.json");
    let o = bin()
        .args(["run", "--scenario", path.to_str().unwrap(), "--ticks", "1"])
        .env("SMARTGRID_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("ticks.csv").exists());
}

#[test]
fn invalid_override_is_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("reference.json");
    let o = run(&["run", "--scenario", path.to_str().unwrap(), "--beta", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_scenario_file_is_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(scenario("reference.json")).unwrap().replace("\"substation\": \"SUB1\"", "\"substation\": \"NOPE\"");
    fs::write(&bad, text).unwrap();
    let o = run(&["run", "--scenario", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NOPE"));

    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    let o = run(&["run", "--scenario", empty.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_scenario_file_is_runtime_error() {
    let o = run(&["run", "--scenario", "/nonexistent.json", "--out", "/tmp/unused-smartgrid"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        assert_eq!(run(&["gen", "--seed", "7", "--out", p.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.json");
    run(&["gen", "--seed", "8", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert!(smartgrid::io::load_scenario(&a).is_ok());
}

#[test]
fn gen_rejects_zero_houses() {
    assert_eq!(run(&["gen", "--houses", "0"]).status.code(), Some(2));
}

#[test]
fn oracle_reports_gap() {
    let path = scenario("reference.json");
    let o = run(&["oracle", "--scenario", path.to_str().unwrap(), "--ticks", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("tick,capacity,achieved,optimum,gap,gap_pct"));
    assert!(text.contains("0,60,545.000,577.000,32.000,"), "{text}");
}

#[test]
fn oracle_rejects_large_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("big.json");
    run(&["gen", "--houses", "40", "--out", big.to_str().unwrap()]);
    let o = run(&["oracle", "--scenario", big.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).is_empty());
}

#[test]
fn float_scalar_matches_exact_on_reference() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("reference.json");
    for (name, scalar) in [("e", "exact"), ("f", "float")] {
        let out = dir.path().join(name);
        let o = run(&["run", "--scenario", path.to_str().unwrap(), "--scalar", scalar, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        fs::read(dir.path().join("e/ticks.csv")).unwrap(),
        fs::read(dir.path().join("f/ticks.csv")).unwrap()
    );
}
