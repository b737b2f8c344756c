//! `mctsteg`: batch embedding, baselines, detector training and evaluation.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

use config::{Opts, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "mctsteg", version, about = "Steganographic embedding with search-learned distortion")]
#[command(after_help = "Settings precedence: flags > --config file > defaults. Log level via MCTSTEG_LOG.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed covers with search-adjusted costs.
    Embed(Opts),
    /// Embed covers with an additive (plain) or CMD baseline.
    Baseline(Opts),
    /// Train the builtin detector on cover/stego pairs.
    TrainEnv(Opts),
    /// FCC, change rate and P_E of stego sets against their covers.
    Evaluate(Opts),
    /// Run plain, CMD and search-based embedding over one manifest and compare.
    Bench(Opts),
    /// Write a synthetic cover corpus.
    GenCorpus(Opts),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (opts, handler): (Opts, fn(&RunConfig) -> Result<(), CliError>) = match cli.command {
        Command::Embed(o) => (o, commands::cmd_embed),
        Command::Baseline(o) => (o, commands::cmd_baseline),
        Command::TrainEnv(o) => (o, commands::cmd_train_env),
        Command::Evaluate(o) => (o, commands::cmd_evaluate),
        Command::Bench(o) => (o, commands::cmd_bench),
        Command::GenCorpus(o) => (o, commands::cmd_gen_corpus),
    };
    let cfg = RunConfig::resolve(opts)?;
    handler(&cfg)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCTSTEG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.record());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.record());
        std::process::exit(err.exit_code());
    }
}
