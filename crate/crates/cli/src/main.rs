//! `inner-iou`: evaluate losses, run regression simulations and deviation
//! sweeps from the command line.
//!
//! Exit status: 0 on success, 1 when a checked property fails, 2 on usage or
//! configuration errors.

mod eval;
mod output;
mod sim;
mod sweep;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "inner-iou", version, about = "IoU-family losses with auxiliary-box variants")]
struct Cli {
    /// Worker threads for simulations (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Seed for random sampling; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one loss on one anchor/ground-truth pair and print JSON.
    Eval(eval::EvalArgs),
    /// Run the gradient-descent regression simulation.
    Sim(sim::SimArgs),
    /// Sweep the center deviation and check the scale conclusions.
    Sweep(sweep::SweepArgs),
}

pub struct Global {
    pub threads: usize,
    pub seed: Option<u64>,
}

pub const EXIT_FAILED_CHECK: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let global = Global { threads: cli.threads, seed: cli.seed };
    let result = match cli.command {
        Command::Eval(args) => eval::run(args),
        Command::Sim(args) => sim::run(args, &global),
        Command::Sweep(args) => sweep::run(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
