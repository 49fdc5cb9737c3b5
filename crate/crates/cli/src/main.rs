use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use perov_dp_cli::commands::{
    cmd_classify, cmd_compare_conditions, cmd_solve, cmd_spectral, RunContext,
};
use perov_dp_cli::CliError;

/// Solve and certify Markov dynamic programs with unbounded rewards.
#[derive(Parser)]
#[command(name = "perov-dp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the spectral radius of the model's coefficient matrix and
    /// report it against the uniform row-sum condition.
    Spectral(CommonArgs),
    /// Run the fixed-point solver and write the value/policy table and the
    /// iteration trace.
    Solve(CommonArgs),
    /// Classify a savings problem as Convergent, Divergent, or
    /// Inconclusive from its coefficient matrix.
    Classify(CommonArgs),
    /// Tabulate the uniform (row-sum) condition against the spectral one.
    CompareConditions(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Model configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.toml and CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized verification blocks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the solver (or spectral) tolerance from the config.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the iteration budget from the config.
    #[arg(long)]
    max_iter: Option<usize>,
}

fn run(command: &Command) -> Result<(), CliError> {
    let args = match command {
        Command::Spectral(a)
        | Command::Solve(a)
        | Command::Classify(a)
        | Command::CompareConditions(a) => a,
    };
    let config_text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let ctx = RunContext {
        config_path: &args.config.display().to_string(),
        config_text: &config_text,
        out_dir: &args.out,
        seed: args.seed,
        tol_override: args.tol,
        max_iter_override: args.max_iter,
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Spectral(_) => cmd_spectral(&ctx, &mut out)?,
        Command::Solve(_) => cmd_solve(&ctx, &mut out)?,
        Command::Classify(_) => cmd_classify(&ctx, &mut out)?,
        Command::CompareConditions(_) => cmd_compare_conditions(&ctx, &mut out)?,
    };
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        // Downstream consumers closing the pipe early is not a failure.
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
