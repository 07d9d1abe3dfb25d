//! Binary entry point: parse, dispatch, map errors to exit codes.

use clap::{Parser, Subcommand};

use s2p2_cli::commands::{
    cmd_bench, cmd_eval, cmd_simulate, cmd_trace, cmd_train, BenchArgs, EvalArgs, SimulateArgs,
    TraceArgs, TrainArgs,
};
use s2p2_cli::{configure_threads, CliError};

#[derive(Parser)]
#[command(name = "s2p2", version, about = "Marked point-process toolkit")]
struct Cli {
    /// Worker threads (overrides the S2P2_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw sequences from a named generator.
    Simulate(SimulateArgs),
    /// Fit a model from a config file.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Dump an intensity trajectory on a uniform grid.
    Trace(TraceArgs),
    /// Time the recurrence kernels across sequence lengths.
    Bench(BenchArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.threads);
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args).map(|_| ()),
        Command::Train(args) => cmd_train(args).map(|_| ()),
        Command::Eval(args) => cmd_eval(args).map(|_| ()),
        Command::Trace(args) => cmd_trace(args).map(|_| ()),
        Command::Bench(args) => cmd_bench(args).map(|_| ()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
