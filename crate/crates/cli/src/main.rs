use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sscl_cli::commands::{self, Overrides, EXIT_CONFIG};

/// Simulator and verification harness for stochastic scalar conservation
/// laws on compact manifolds.
#[derive(Parser)]
#[command(name = "sscl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, paths: self.paths, out: self.out.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured ensemble and write ledgers, snapshots and a manifest.
    Simulate(RunArgs),
    /// Run a verification suite; exit 3 if any check fails.
    Verify {
        suite: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Turn a run directory into tidy CSVs for plotting.
    ExportPlotdata { run_dir: PathBuf },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SSCL_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("cli: SSCL_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("cli: SSCL_THREADS must be a positive integer, got `0`".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| format!("cli: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(&a.config, &a.overrides()),
        Command::Verify { suite, args } => commands::verify(suite, &args.config, &args.overrides()),
        Command::ExportPlotdata { run_dir } => commands::export_plotdata(run_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
