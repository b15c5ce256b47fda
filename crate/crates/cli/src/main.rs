//! `flowgap` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowgap::{AbstractionLevel, Error};

use crate::config::{parse_band, parse_f64_list, parse_u64_list, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "flowgap",
    version,
    about = "Support, entropy and oversight-cost audits of workflow event logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics of a log.
    Stats(LogArgs),
    /// State refinement and blind-mass tables per abstraction level.
    Audit(LogArgs),
    /// Autonomy envelope on the full log and reliability-cost frontier on
    /// the held-out split.
    Sweep(LogArgs),
    /// Held-out agent against its surrogates on the chronological split.
    Validate {
        #[command(flatten)]
        args: LogArgs,
        /// Also write one per-decision CSV per gate.
        #[arg(long)]
        decisions: bool,
    },
    /// Generate a synthetic log from a process file or built-in fixture
    /// (random, hub, self-loop, chain).
    Synth {
        #[arg(long)]
        process: String,
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

// Aliases keep clap from treating the lists as repeated flags.
type TauList = Vec<u64>;
type F64List = Vec<f64>;

#[derive(Args)]
struct LogArgs {
    /// Event log CSV.
    log: PathBuf,
    /// Schema preset (bpi2019, synthetic) or TOML/JSON config file.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, value_parser = parse_level)]
    level: Option<AbstractionLevel>,
    /// Support thresholds, comma separated.
    #[arg(long, value_parser = parse_u64_list)]
    tau: Option<TauList>,
    /// Entropy thresholds in bits: comma list or lo:hi:step.
    #[arg(long, value_parser = parse_f64_list)]
    h0: Option<F64List>,
    /// Risk thresholds: comma list or lo:hi:step.
    #[arg(long, value_parser = parse_f64_list)]
    w0: Option<F64List>,
    /// Training fraction of the chronological split.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long = "ca")]
    c_a: Option<f64>,
    #[arg(long = "ch")]
    c_h: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Exception activities, one per line.
    #[arg(long)]
    exceptions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Entropy band `lo,hi` for the gateway report.
    #[arg(long, value_parser = parse_band)]
    band: Option<[f64; 2]>,
}

fn parse_level(s: &str) -> Result<AbstractionLevel, String> {
    AbstractionLevel::parse(s).ok_or_else(|| format!("unknown level `{s}`, expected l1, l2 or l3"))
}

impl LogArgs {
    fn resolve(&self) -> flowgap::Result<RunConfig> {
        RunConfig::resolve(
            self.schema.as_deref(),
            Overrides {
                level: self.level,
                tau: self.tau.clone(),
                h0: self.h0.clone(),
                w0: self.w0.clone(),
                split: self.split,
                c_a: self.c_a,
                c_h: self.c_h,
                lambda: self.lambda,
                exceptions: self.exceptions.clone(),
                out: self.out.clone(),
                band: self.band,
            },
        )
    }
}

fn run(cli: Cli) -> flowgap::Result<()> {
    match cli.command {
        Command::Stats(a) => commands::stats(&a.log, &a.resolve()?),
        Command::Audit(a) => commands::audit(&a.log, &a.resolve()?),
        Command::Sweep(a) => commands::sweep(&a.log, &a.resolve()?),
        Command::Validate { args, decisions } => {
            commands::validate(&args.log, &args.resolve()?, decisions)
        }
        Command::Synth {
            process,
            n,
            seed,
            out,
        } => commands::synth(&process, n, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
