use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smartgrid::generate::{random_scenario, TopologyParams};
use smartgrid::io::{self, IoError, RunManifest};
use smartgrid::model::{validate_scenario, AlphaMode, ScenarioConfig};
use smartgrid::sim::{profit_metric, CostModel, SimError, Simulator};
use smartgrid::verify::reference_checks;
use smartgrid::{Rational, Scalar, Wh};

#[derive(Parser)]
#[command(name = "smartgrid", version, about = "Deterministic smart-grid demand-side management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write CSV time series.
    Run(RunArgs),
    /// Write a random valid scenario.
    Gen(GenArgs),
    /// Check the reference microgrid against its tabulated values.
    Verify,
    /// Compare achieved utility with the global optimum on a small scenario.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalarKind {
    /// Exact rational scores.
    Exact,
    /// 64-bit float scores.
    Float,
}

#[derive(Args)]
struct Overrides {
    /// Seed for renewable output noise (default: the scenario's).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feedback_rounds: Option<u32>,
    /// `mean` or `fixed:VALUE`.
    #[arg(long, value_parser = parse_alpha)]
    alpha_mode: Option<AlphaMode>,
    /// Knapsack weight quantum in Wh.
    #[arg(long)]
    granularity: Option<Wh>,
    /// Forecast smoothing factor in [0, 1].
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    scalar: ScalarKind,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Ticks to simulate (default: the scenario horizon).
    #[arg(long)]
    ticks: Option<usize>,
    #[arg(long, env = io::OUT_DIR_ENV, default_value = io::DEFAULT_OUT_DIR)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    houses: usize,
    #[arg(long, default_value_t = 2)]
    producers: usize,
    #[arg(long)]
    houses_per_microgrid: Option<usize>,
    #[arg(long)]
    min_devices: Option<usize>,
    #[arg(long)]
    max_devices: Option<usize>,
    /// Total producer capacity relative to total demand.
    #[arg(long)]
    supply_ratio: Option<f64>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 1)]
    ticks: usize,
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_alpha(s: &str) -> Result<AlphaMode, String> {
    match s {
        "mean" | "microgrid_mean" => Ok(AlphaMode::MicrogridMean),
        _ => s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .map(AlphaMode::Fixed)
            .ok_or_else(|| format!("expected `mean` or `fixed:VALUE`, got `{s}`")),
    }
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Invalid(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            Failure::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Parse { .. } | IoError::Version { .. } | IoError::Invalid { .. } => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(_) => Failure::Invalid(e.to_string()),
            SimError::TooLarge { .. } => Failure::Runtime(e.to_string()),
        }
    }
}

/// Applies command-line overrides and revalidates. Returns the applied
/// overrides as `(flag, value)` pairs for the manifest.
fn apply(cfg: &mut ScenarioConfig, o: &Overrides) -> Result<Vec<(String, String)>, Failure> {
    let mut applied = Vec::new();
    if let Some(seed) = o.seed {
        cfg.seed = seed;
        applied.push(("seed".into(), seed.to_string()));
    }
    if let Some(r) = o.feedback_rounds {
        cfg.feedback_rounds = r;
        applied.push(("feedback-rounds".into(), r.to_string()));
    }
    if let Some(a) = o.alpha_mode {
        cfg.alpha_mode = a;
        let v = match a {
            AlphaMode::MicrogridMean => "mean".to_string(),
            AlphaMode::Fixed(v) => format!("fixed:{v}"),
        };
        applied.push(("alpha-mode".into(), v));
    }
    if let Some(g) = o.granularity {
        cfg.granularity = g;
        applied.push(("granularity".into(), g.to_string()));
    }
    if let Some(b) = o.beta {
        cfg.beta = b;
        applied.push(("beta".into(), b.to_string()));
    }
    if let ScalarKind::Float = o.scalar {
        applied.push(("scalar".into(), "float".into()));
    }
    let violations = validate_scenario(cfg);
    if violations.is_empty() {
        Ok(applied)
    } else {
        Err(Failure::Invalid(SimError::Invalid(violations).to_string()))
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let text = std::fs::read(&args.scenario)
        .map_err(|source| IoError::Read { path: args.scenario.clone(), source })?;
    let mut cfg = io::parse_scenario(&String::from_utf8_lossy(&text), &args.scenario)?;
    let overrides = apply(&mut cfg, &args.overrides)?;
    let ticks = args.ticks.unwrap_or(cfg.horizon);

    RunManifest {
        scenario: args.scenario.display().to_string(),
        scenario_sha256: io::sha256_hex(&text),
        seed: cfg.seed,
        horizon: ticks,
        out_dir: args.out.display().to_string(),
        overrides,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
    .write(&args.out)?;

    match args.overrides.scalar {
        ScalarKind::Exact => simulate::<Rational>(cfg, ticks, &args.out),
        ScalarKind::Float => simulate::<f64>(cfg, ticks, &args.out),
    }
}

fn simulate<S: Scalar>(cfg: ScenarioConfig, ticks: usize, out: &Path) -> Result<(), Failure> {
    let mut sim = Simulator::<S>::new(cfg.clone())?;
    let results = sim.run(ticks);
    io::write_timeseries(&results, &cfg, out)?;

    let gross: Vec<Wh> = results.iter().map(|r| r.gross).collect();
    let net: Vec<Wh> = results.iter().map(|r| r.net).collect();
    let profit = profit_metric(&gross, &net, &CostModel::from_config(&cfg));
    let supply: Wh = results.iter().map(|r| r.supply).sum();
    let unserved: Wh = results.iter().map(|r| r.unserved_mandatory).sum();
    let spilled: Wh = results.iter().map(|r| r.spilled).sum();
    let last_gap = results.last().map_or(0, |r| r.gap);
    println!(
        "{ticks} ticks: supply {supply} Wh, unserved mandatory {unserved} Wh, spilled {spilled} Wh, final gap {last_gap} Wh, profit {profit:.2}"
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let defaults = TopologyParams::default();
    let min = args.min_devices.unwrap_or(defaults.devices_per_house.0);
    let params = TopologyParams {
        houses_per_microgrid: args.houses_per_microgrid.unwrap_or(defaults.houses_per_microgrid),
        devices_per_house: (min, args.max_devices.unwrap_or(defaults.devices_per_house.1.max(min))),
        supply_ratio: args.supply_ratio.unwrap_or(defaults.supply_ratio),
        ..defaults
    };
    let cfg = random_scenario(args.seed, args.houses, args.producers, &params)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    match args.out {
        Some(path) => {
            io::save_scenario(&cfg, &path)?;
            println!("wrote {} ({} houses, {} devices)", path.display(), cfg.houses.len(), cfg.device_count());
        }
        None => print!("{}", io::scenario_to_string(&cfg)),
    }
    Ok(())
}

fn verify() -> Result<(), Failure> {
    let checks = reference_checks();
    for c in &checks {
        println!("{c}");
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed", checks.len());
    if passed == checks.len() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{} check(s) failed", checks.len() - passed)))
    }
}

fn oracle(args: OracleArgs) -> Result<(), Failure> {
    let mut cfg = io::load_scenario(&args.scenario)?;
    apply(&mut cfg, &args.overrides)?;
    match args.overrides.scalar {
        ScalarKind::Exact => oracle_with::<Rational>(cfg, args.ticks),
        ScalarKind::Float => oracle_with::<f64>(cfg, args.ticks),
    }
}

fn oracle_with<S: Scalar>(cfg: ScenarioConfig, ticks: usize) -> Result<(), Failure> {
    let mut sim = Simulator::<S>::new(cfg)?;
    sim.global_optimum()?;
    println!("tick,capacity,achieved,optimum,gap,gap_pct");
    for _ in 0..ticks {
        let capacity = sim.oracle_capacity();
        let optimum = sim.global_optimum()?.total_value;
        let r = sim.tick();
        let achieved = r.achieved_utility.to_f64();
        let best = optimum.to_f64();
        let gap = best - achieved;
        let pct = if best > 0.0 { 100.0 * gap / best } else { 0.0 };
        println!("{},{capacity},{achieved:.3},{best:.3},{gap:.3},{pct:.2}", r.tick);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Gen(a) => gen(a),
        Command::Verify => verify(),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
