use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vec_offload::bench::{
    default_deadline_grid, default_rho_grid, exit, load_config, run_simulate, run_sweep_deadline, run_sweep_rho,
    validate_outputs, BenchError, LoadedConfig, RunOptions,
};
use vec_offload::optimizer::{precheck, Formulation, OptimizeOptions, Strategy};
use vec_offload::solver::SolveOptions;

/// Energy-efficient task offloading for vehicles at roadside units.
#[derive(Debug, Parser)]
#[command(name = "vecoff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one strategy and write allocation.csv, energy.csv, summary.txt.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "partial", value_parser = parse_strategy)]
        strategy: Strategy,
    },
    /// Energy of every strategy across deadlines; writes deadline_sweep.csv.
    SweepDeadline {
        #[command(flatten)]
        common: Common,
        /// Deadlines in seconds, comma separated.
        #[arg(long, value_delimiter = ',')]
        deadlines: Option<Vec<f64>>,
    },
    /// Energy for a common offloading share ρ; writes rho_sweep.csv.
    SweepRho {
        #[command(flatten)]
        common: Common,
        /// Offloading shares in [0, 1], comma separated.
        #[arg(long, value_delimiter = ',')]
        rhos: Option<Vec<f64>>,
    },
    /// Check a config, or with --plan a directory of simulate output.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Directory holding allocation.csv and energy.csv.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweep cells.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Relative KKT and duality-gap tolerance of the solver.
    #[arg(long, default_value_t = SolveOptions::default().tolerance)]
    tolerance: f64,
    #[arg(long, value_enum, default_value = "reduced")]
    formulation: FormulationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormulationArg {
    /// Uplink variables only; compute and downlink are rebuilt afterwards.
    Reduced,
    /// Uplink, compute and downlink variables with explicit causality rows.
    Full,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

impl Common {
    fn load(&self) -> Result<LoadedConfig, BenchError> {
        Ok(load_config(&self.config, self.seed)?)
    }

    fn options(&self) -> Result<RunOptions, BenchError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(BenchError::Grid(format!("--tolerance must be positive, got {}", self.tolerance)));
        }
        let formulation = match self.formulation {
            FormulationArg::Reduced => Formulation::Reduced,
            FormulationArg::Full => Formulation::Full,
        };
        let solve = SolveOptions { tolerance: self.tolerance, ..SolveOptions::default() };
        Ok(RunOptions { optimize: OptimizeOptions { formulation, solve }, workers: self.workers })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<i32, BenchError> {
    match command {
        Command::Simulate { common, strategy } => {
            let (loaded, options) = (common.load()?, common.options()?);
            let report = run_simulate(&loaded, strategy, &options, &common.out)?;
            print!("{}", report.summary);
            Ok(exit::SUCCESS)
        }
        Command::SweepDeadline { common, deadlines } => {
            let (loaded, options) = (common.load()?, common.options()?);
            let grid = deadlines.unwrap_or_else(default_deadline_grid);
            let sweep = run_sweep_deadline(&loaded, &grid, &options, &common.out)?;
            println!("deadline_s  {}", Strategy::ALL.map(|s| format!("{s:>12}")).join(" "));
            for row in &sweep.rows {
                let cells: Vec<String> = row.cells.iter().map(|c| format!("{:>12}", short(c.energy(), c))).collect();
                println!("{:>10}  {}", row.deadline, cells.join(" "));
            }
            Ok(exit::SUCCESS)
        }
        Command::SweepRho { common, rhos } => {
            let (loaded, options) = (common.load()?, common.options()?);
            let grid = rhos.unwrap_or_else(default_rho_grid);
            let sweep = run_sweep_rho(&loaded, &grid, &options, &common.out)?;
            for row in &sweep.rows {
                println!("rho {:>5}  {}", row.rho, short(row.total.energy(), &row.total));
            }
            for check in &sweep.endpoints {
                println!(
                    "endpoint rho = {}: {} J vs reference {} J (relative error {:e})",
                    check.rho, check.value, check.reference, check.relative_error
                );
            }
            if let Some((rho, e)) = sweep.argmin() {
                println!("lowest energy on the grid: {e:.6} J at rho = {rho}");
            }
            Ok(exit::SUCCESS)
        }
        Command::Validate { common, plan } => {
            let loaded = common.load()?;
            let s = &loaded.scenario;
            println!(
                "vehicles {}  frames per window {}  RSUs {}  frame {} s  slot {} s  digest {}",
                s.vehicles(),
                s.frames(),
                s.config.rsu_count,
                s.config.frame,
                s.config.slot,
                loaded.digest
            );
            match plan {
                None => {
                    if let Err(e) = precheck(s, 1.0) {
                        println!("complete offloading is infeasible: {e}");
                        return Ok(exit::INFEASIBLE);
                    }
                    println!("config ok; complete offloading passes the window prechecks");
                    Ok(exit::SUCCESS)
                }
                Some(dir) => {
                    let report = validate_outputs(&loaded, &dir)?;
                    for check in &report.checks {
                        let status = if check.max_violation <= report.tolerance { "ok" } else { "FAIL" };
                        let at = check
                            .first_offender
                            .map(|o| format!(" (first at vehicle {}, frame {})", o.vehicle, o.frame))
                            .unwrap_or_default();
                        println!("{:<18} {status:<4} max violation {:e}{at}", check.family.name(), check.max_violation);
                    }
                    Ok(if report.passes() { exit::SUCCESS } else { exit::INFEASIBLE })
                }
            }
        }
    }
}

fn short(energy: Option<f64>, cell: &impl std::fmt::Display) -> String {
    energy.map_or_else(|| cell.to_string(), |e| format!("{e:.6}"))
}
