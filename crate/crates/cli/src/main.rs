//! `prefopt`: batch front end for synthesis, training, scoring, evaluation,
//! generation, screening and paratope prediction.
//!
//! Failures print a single line `ERROR <code>: <message>` to stderr and exit
//! with status 2.

mod commands;
mod config;
mod error;
mod rundir;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prefopt_core::trainer::Objective;

use commands::Invocation;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "prefopt", version, about = "Preference optimization for structure-conditioned antibody design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON config for the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory holding assays.csv and structures/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed used wherever the config leaves one unset.
    #[arg(long, env = "PREFOPT_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a known oracle.
    Synth(Common),
    /// Fine-tune the decoder.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training objective: nll, dpo or simpo.
        #[arg(long)]
        objective: Option<String>,
    },
    /// Score sequences with the model log-likelihood.
    Score(Common),
    /// Per-assay report from a score table.
    Eval(Common),
    /// Sample variants from the mutable pool.
    Generate(Common),
    /// Two-stage screening down to a Pareto panel.
    Screen(Common),
    /// Train and evaluate the paratope head.
    Paratope(Common),
}

fn invocation(c: &Common, needs_data: bool) -> CliResult<Invocation> {
    let config = c.config.clone().ok_or(CliError::MissingFlag("config"))?;
    let out = c.out.clone().ok_or(CliError::MissingFlag("out"))?;
    if needs_data && c.data.is_none() {
        return Err(CliError::MissingFlag("data"));
    }
    Ok(Invocation {
        config,
        data: c.data.clone(),
        out,
        seed: c.seed.unwrap_or(0),
    })
}

/// Sends log records to `<out>/run.log`; timestamps stay out of the
/// primary outputs.
fn init_logging(out: &std::path::Path) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join(rundir::LOG_FILE))?;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(file)))
        .try_init()
        .map_err(|e| CliError::Args(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, needs_data) = match &cli.command {
        Command::Synth(c) => (c, false),
        Command::Train { common, .. } => (common, true),
        Command::Score(c) | Command::Eval(c) | Command::Generate(c) | Command::Screen(c) | Command::Paratope(c) => {
            (c, true)
        }
    };
    let inv = invocation(common, needs_data)?;
    init_logging(&inv.out)?;
    let result = match &cli.command {
        Command::Synth(_) => commands::synth(&inv),
        Command::Train { objective, .. } => {
            let name = objective.as_deref().ok_or(CliError::MissingFlag("objective"))?;
            let obj = Objective::parse(name)
                .ok_or_else(|| CliError::Args(format!("unknown objective {name:?}; expected nll, dpo or simpo")))?;
            commands::train_cmd(&inv, obj)
        }
        Command::Score(_) => commands::score(&inv),
        Command::Eval(_) => commands::eval(&inv),
        Command::Generate(_) => commands::generate(&inv),
        Command::Screen(_) => commands::screen(&inv),
        Command::Paratope(_) => commands::paratope(&inv),
    };
    if let Err(e) = &result {
        log::error!("{} {e}", e.code());
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("ERROR {}: {first}", CliError::Args(String::new()).code());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(std::io::stderr(), "ERROR {}: {line}", e.code());
            ExitCode::from(2)
        }
    }
}
