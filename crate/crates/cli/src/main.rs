//! `buyback` command line: simulate online buyback-matching algorithms,
//! sweep the buyback factor, plot competitive-ratio curves, replay
//! lower-bound families, audit traces, and run rounding experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use buyback_cli::{
    cmd_audit, cmd_curves, cmd_gen, cmd_lowerbound, cmd_opt, cmd_round, cmd_simulate, cmd_sweep,
    CliError, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "buyback", version, about = "online matching with costly cancellations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Instance JSON file
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Generator spec, e.g. greedy-killer:t=10,f=1
    #[arg(long = "gen")]
    generator: Option<String>,
    /// Algorithm: fractional | det | greedy | free-disposal | single-canonical
    /// (rounding schemes: lossless-round | ak-round | cap-round)
    #[arg(long)]
    alg: Option<String>,
    /// Buyback factor override
    #[arg(long)]
    f: Option<f64>,
    /// Grid A:B:STEP over the buyback factor
    #[arg(long = "f-grid")]
    f_grid: Option<String>,
    /// Replications
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Tolerance override for audits
    #[arg(long)]
    tol: Option<f64>,
    /// Fixed quantile offset for rounding schemes
    #[arg(long)]
    eta: Option<f64>,
    /// Competitive-ratio target for audits
    #[arg(long)]
    gamma: Option<f64>,
    /// Trace CSV (audit)
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl Common {
    fn into_config(self) -> ExperimentConfig {
        ExperimentConfig {
            instance_path: self.instance,
            generator: self.generator,
            algorithm: self.alg,
            f: self.f,
            f_grid: self.f_grid,
            replications: self.reps,
            master_seed: self.seed,
            out_dir: self.out,
            tolerance: self.tol,
            eta: self.eta,
            gamma: self.gamma,
            trace_path: self.trace,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one instance
    Simulate(Common),
    /// Sweep the buyback factor over the cloud-market family
    Sweep(Common),
    /// Tabulate the competitive-ratio curves
    Curves(Common),
    /// Replay a lower-bound family
    Lowerbound(Common),
    /// Audit a stored trace against an instance
    Audit(Common),
    /// Generate an instance
    Gen(Common),
    /// Optimum offline value of an instance
    Opt(Common),
    /// Rounding experiment
    Round(Common),
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(common) => {
            let report = cmd_simulate(&common.into_config())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Sweep(common) => {
            let config = common.into_config();
            let cells = cmd_sweep(&config)?;
            println!(
                "wrote {} cells to {}",
                cells.len(),
                config.out_dir.join("sweep.csv").display()
            );
        }
        Command::Curves(common) => {
            let config = common.into_config();
            let rows = cmd_curves(&config)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                config.out_dir.join("curves.csv").display()
            );
        }
        Command::Lowerbound(common) => {
            let report = cmd_lowerbound(&common.into_config())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Audit(common) => {
            let report = cmd_audit(&common.into_config())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Gen(common) => {
            let path = cmd_gen(&common.into_config())?;
            println!("wrote {}", path.display());
        }
        Command::Opt(common) => {
            let report = cmd_opt(&common.into_config())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Round(common) => {
            let report = cmd_round(&common.into_config())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
