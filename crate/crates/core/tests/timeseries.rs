use std::fs;

use smartgrid::fixtures::{reference_scenario, REFERENCE_HOUSES};
use smartgrid::io::{load_scenario, save_scenario, write_timeseries, IoError, TICK_COLUMNS};
use smartgrid::ExactSimulator;

fn lines(path: &std::path::Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn one_tick_gives_one_row_per_entity() {
    let cfg = reference_scenario();
    let results = ExactSimulator::new(cfg.clone()).unwrap().run(1);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_timeseries(&results, &cfg, dir.path()).unwrap();
    let ticks = lines(&paths[0]);
    assert_eq!(ticks[0], TICK_COLUMNS.join(","));
    assert_eq!(ticks.len(), 2);
    assert_eq!(ticks[1], "0,45,45,0,0,0,1.000000,0.000000,82,45");
    assert_eq!(lines(&paths[1]).len(), 1 + REFERENCE_HOUSES.len());
    assert_eq!(lines(&paths[2]).len(), 1 + cfg.edges.len());
}

#[test]
fn day_run_has_288_rows() {
    let cfg = reference_scenario();
    let results = ExactSimulator::new(cfg.clone()).unwrap().run(cfg.horizon);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_timeseries(&results, &cfg, dir.path()).unwrap();
    assert_eq!(lines(&paths[0]).len(), 289);
}

#[test]
fn empty_results_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty: Vec<smartgrid::ExactTickResult> = Vec::new();
    assert!(matches!(write_timeseries(&empty, &reference_scenario(), dir.path()), Err(IoError::NoResults)));
}

#[test]
fn unwritable_directory() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = reference_scenario();
    let results = ExactSimulator::new(cfg.clone()).unwrap().run(1);
    assert!(matches!(write_timeseries(&results, &cfg, blocker.join("sub")), Err(IoError::Write { .. })));
}

#[test]
fn saved_scenario_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    save_scenario(&reference_scenario(), &path).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), reference_scenario());
}

#[test]
fn missing_file_is_a_read_error() {
    assert!(matches!(load_scenario("/nonexistent/s.json"), Err(IoError::Read { .. })));
}
