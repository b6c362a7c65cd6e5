use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use powerdl::config::SystemConfig;
use powerdl::experiment::{run_plan, ExperimentPlan, Mode, FAST_HORIZON};
use powerdl::oracle::build_occupancy_lp;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    SingleRun,
    VSweep,
    MonteCarlo,
    OracleOnly,
    Robustness,
    SingleUser,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SingleRun => Mode::SingleRun,
            ModeArg::VSweep => Mode::VSweep,
            ModeArg::MonteCarlo => Mode::MonteCarlo,
            ModeArg::OracleOnly => Mode::OracleOnly,
            ModeArg::Robustness => Mode::Robustness,
            ModeArg::SingleUser => Mode::SingleUser,
        }
    }
}

/// Simulate power-constrained file-downloading schedulers and compare them
/// with the exact optimum.
#[derive(Debug, Parser)]
#[command(name = "powerdl", version)]
struct Args {
    /// System configuration (TOML). Defaults to the built-in three-user system.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "single-run")]
    mode: ModeArg,

    /// Comma-separated tradeoff values.
    #[arg(long, value_delimiter = ',')]
    v_grid: Option<Vec<f64>>,

    #[arg(long, default_value_t = 100)]
    replicates: u64,

    #[arg(long)]
    horizon: Option<u64>,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Use a 100000-slot horizon unless --horizon is given.
    #[arg(long)]
    fast: bool,

    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write the occupation program in CPLEX LP format to this file.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

fn run(args: Args) -> Result<bool, String> {
    let config = match &args.config {
        Some(path) => SystemConfig::load(path).map_err(|e| e.to_string())?,
        None => SystemConfig::baseline(),
    };
    if let Some(path) = &args.dump_lp {
        let lp = build_occupancy_lp(&config.system).map_err(|e| e.to_string())?;
        std::fs::write(path, lp.to_linear_program().to_cplex_lp())
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    let mut plan = ExperimentPlan::new(config, args.mode.into());
    if let Some(grid) = args.v_grid {
        plan.v_grid = grid;
    }
    plan.replicates = args.replicates;
    plan.seed = args.seed;
    if let Some(h) = args.horizon {
        plan.horizon = h;
    } else if args.fast {
        plan.horizon = FAST_HORIZON;
    }
    let table = run_plan(&plan).map_err(|e| e.to_string())?;
    let text = table.render().map_err(|e| e.to_string())?;
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{text}"),
    }
    for v in &table.violations {
        eprintln!("invariant violated: {v}");
    }
    Ok(table.violations.is_empty())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
