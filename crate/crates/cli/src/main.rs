//! `emkit` command-line tool.
//!
//! Exit codes: 0 success, 2 data or usage error, 3 backend failure,
//! 4 invariant violation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, Preset};
use config::RunConfig;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "emkit",
    version,
    about = "Episodic-memory dialogue data and evaluation toolkit"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; required by the gen-* commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Chat backend: `scripted:<path>` or `http:<url>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Round cap for generated dialogues.
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw character cards.
    GenPersonas {
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Generate timestamped two-agent dialogues and training samples.
    GenDialogues {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Persona file from gen-personas; drawn fresh when absent.
        #[arg(long)]
        personas: Option<PathBuf>,
    },
    /// Synthesize temporal-reasoning QA sets.
    GenTemporalQa {
        #[arg(long, value_enum, default_value = "both")]
        preset: Preset,
    },
    /// Run a model over a benchmark (similarity) or temporal-QA file (keywords).
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Human scores (`{"point_id", "score"}` lines) to report alongside.
        #[arg(long)]
        human: Option<PathBuf>,
        /// Row label in the report tables.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Print statistics for any file this tool reads or writes.
    Stats { path: PathBuf },
    /// Correlate human scores with similarity results per difficulty.
    Correlate {
        #[arg(long)]
        human: PathBuf,
        #[arg(long)]
        results: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(cap) = cli.max_rounds {
        cfg.limits.max_rounds = cap;
    }
    let jobs = cli
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed),
        out: cli
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        backend: cli.backend.clone(),
        jobs,
        cfg,
    };
    match cli.command {
        Command::GenPersonas { count } => commands::gen_personas(&ctx, count),
        Command::GenDialogues { count, personas } => {
            commands::gen_dialogues(&ctx, count, personas.as_deref())
        }
        Command::GenTemporalQa { preset } => commands::gen_temporal_qa(&ctx, preset),
        Command::Eval {
            dataset,
            human,
            name,
        } => commands::run_eval(&ctx, &dataset, human.as_deref(), &name),
        Command::Stats { path } => {
            print!("{}", commands::stats(&path)?);
            Ok(())
        }
        Command::Correlate { human, results } => commands::correlate(&ctx, &human, &results),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}
