//! Scenario files, run manifests and CSV time series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{validate_scenario, ScenarioConfig, Violation, SCENARIO_VERSION};
use crate::scalar::Scalar;
use crate::sim::TickResult;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SMARTGRID_OUT";
pub const DEFAULT_OUT_DIR: &str = "out";

/// Column order of `ticks.csv`. New columns are only ever appended.
pub const TICK_COLUMNS: [&str; 10] = [
    "tick", "supply", "demand", "gap", "unserved", "spilled", "peak_avg_ratio", "variance", "gross", "net",
];
pub const HOUSE_COLUMNS: [&str; 11] = [
    "tick", "house", "forecast", "tentative", "bid", "grant", "allocation", "local_used", "served",
    "unserved_mandatory", "strategy",
];
pub const EDGE_COLUMNS: [&str; 5] = ["tick", "edge", "capacity", "flow", "utilization"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: scenario version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: {} violation(s): {}", .violations.len(), .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid { path: PathBuf, violations: Vec<Violation> },
    #[error("no tick results to write")]
    NoResults,
}

/// Output directory from the environment, or `out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioConfig, IoError> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|source| IoError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    if cfg.version != SCENARIO_VERSION {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            found: cfg.version,
            expected: SCENARIO_VERSION,
        });
    }
    let violations = validate_scenario(&cfg);
    if !violations.is_empty() {
        return Err(IoError::Invalid { path: path.to_path_buf(), violations });
    }
    Ok(cfg)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
    parse_scenario(&text, path)
}

pub fn scenario_to_string(cfg: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("scenario serializes");
    s.push('\n');
    s
}

pub fn save_scenario(cfg: &ScenarioConfig, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_file(path.as_ref(), scenario_to_string(cfg).as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| IoError::Write { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub horizon: usize,
    pub out_dir: String,
    /// Command-line overrides applied on top of the scenario, as given.
    pub overrides: Vec<(String, String)>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf, IoError> {
        let path = dir.as_ref().join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn csv_text<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn ticks_csv<S: Scalar>(results: &[TickResult<S>]) -> String {
    csv_text(
        &TICK_COLUMNS,
        results.iter().map(|r| {
            [
                r.tick.to_string(),
                r.supply.to_string(),
                r.demand.to_string(),
                r.gap.to_string(),
                r.unserved_mandatory.to_string(),
                r.spilled.to_string(),
                fmt_f64(r.metrics.peak_to_average),
                fmt_f64(r.metrics.variance),
                r.gross.to_string(),
                r.net.to_string(),
            ]
        }),
    )
}

pub fn houses_csv<S: Scalar>(results: &[TickResult<S>], house_ids: &[String]) -> String {
    csv_text(
        &HOUSE_COLUMNS,
        results.iter().flat_map(|r| {
            r.houses.iter().map(move |h| {
                let strategy = h
                    .strategy
                    .as_ref()
                    .map_or_else(|| "mandatory".to_string(), |s| format!("{}:{}", s.family, s.cutoff));
                [
                    r.tick.to_string(),
                    house_ids[h.house].clone(),
                    h.forecast.to_string(),
                    h.tentative.to_string(),
                    h.bid.to_string(),
                    h.grant.to_string(),
                    h.allocation.to_string(),
                    h.local_used.to_string(),
                    h.served_weight.to_string(),
                    h.unserved_mandatory.to_string(),
                    strategy,
                ]
            })
        }),
    )
}

pub fn edges_csv<S: Scalar>(results: &[TickResult<S>], edge_ids: &[String]) -> String {
    csv_text(
        &EDGE_COLUMNS,
        results.iter().flat_map(|r| {
            edge_ids.iter().zip(&r.edges).map(move |(id, e)| {
                let util = if e.capacity > 0 { e.flow as f64 / e.capacity as f64 } else { 0.0 };
                [
                    r.tick.to_string(),
                    id.clone(),
                    e.capacity.to_string(),
                    e.flow.to_string(),
                    fmt_f64(util),
                ]
            })
        }),
    )
}

/// Writes `ticks.csv`, `houses.csv` and `edges.csv` into `dir`.
pub fn write_timeseries<S: Scalar>(
    results: &[TickResult<S>],
    cfg: &ScenarioConfig,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, IoError> {
    if results.is_empty() {
        return Err(IoError::NoResults);
    }
    let dir = dir.as_ref();
    let house_ids: Vec<String> = cfg.houses.iter().map(|h| h.id.clone()).collect();
    let edge_ids: Vec<String> = cfg.edges.iter().map(|e| e.id.clone()).collect();
    let files = [
        ("ticks.csv", ticks_csv(results)),
        ("houses.csv", houses_csv(results, &house_ids)),
        ("edges.csv", edges_csv(results, &edge_ids)),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        write_file(&path, body.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
