use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use kdvda_cli::{codes, exit_code, run, Subcommand};

#[derive(Parser)]
#[command(
    name = "kdvda",
    version,
    about = "Simulation and verification runs for the damped driven KdV equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Free evolution from seeded data.
    Simulate(RunArgs),
    /// Nudged copy against a seeded reference.
    Assimilate(RunArgs),
    /// Newton solve for the steady state.
    Steady(RunArgs),
    /// Bound chain and mode-count conditions.
    Bounds(RunArgs),
    /// Determining form along the line through the steady state.
    Dform(RunArgs),
    /// Parameter sweep on a worker pool (size from KDVDA_WORKERS).
    Sweep(RunArgs),
    /// Quick invariant checks of every module.
    Selftest(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or a manifest from an earlier run to replay it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override as section.key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                codes::CONFIG
            } else {
                codes::OK
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (sub, args) = match cli.command {
        Command::Simulate(a) => (Subcommand::Simulate, a),
        Command::Assimilate(a) => (Subcommand::Assimilate, a),
        Command::Steady(a) => (Subcommand::Steady, a),
        Command::Bounds(a) => (Subcommand::Bounds, a),
        Command::Dform(a) => (Subcommand::Dform, a),
        Command::Sweep(a) => (Subcommand::Sweep, a),
        Command::Selftest(a) => (Subcommand::Selftest, a),
    };
    match run(sub, args.config.as_deref(), &args.set, &args.out) {
        Ok(m) => {
            eprintln!(
                "{sub}: wrote {} file(s) to {} in {:.2} s",
                m.files.len(),
                args.out.display(),
                m.wall_clock_seconds
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kdvda {sub}: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
