//! `hist`: generate synthetic markets, train HIST, backtest checkpoints and
//! export hidden-concept matrices.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

/// Environment variable supplying the default `--data` directory.
pub const DATA_ROOT_ENV: &str = "HIST_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "hist", version, about = "Concept-oriented stock trend forecasting")]
struct Cli {
    /// Log filter, e.g. `info` or `hist_core=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic market (prices, concepts, caps, true loadings).
    Generate(GenerateArgs),
    /// Train one model variant over one or more seeds and report test metrics.
    Train(TrainArgs),
    /// Simulate top-k daily rebalancing with a trained checkpoint.
    Backtest(BacktestArgs),
    /// Export one date's stock-to-hidden-concept similarity matrix.
    ExportHidden(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic market spec (TOML). Omitted keys take their defaults.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding prices.csv, concepts.csv and caps.csv.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: PathBuf,
    /// Output root; results go to `<out>/<variant>/seed-<s>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Disable a module: disable-correction, disable-predefined,
    /// disable-hidden or disable-individual. Repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<String>,
    /// Seeds, overriding the config, e.g. `--seeds 0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

/// Portfolio size: a fixed `k` or a validation grid search.
#[derive(Clone, Debug, PartialEq)]
pub enum KChoice {
    Fixed(usize),
    Grid,
}

fn parse_k(s: &str) -> Result<KChoice, String> {
    if s == "grid" {
        return Ok(KChoice::Grid);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(KChoice::Fixed(k)),
        _ => Err(format!("expected a positive integer or `grid`, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Checkpoint written by `hist train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Experiment config; defaults to the config.toml beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: PathBuf,
    /// Stocks held each day, or `grid` to pick from the config's k_grid by
    /// final validation return. Defaults to the config's k.
    #[arg(long, value_parser = parse_k)]
    pub k: Option<KChoice>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Trade without costs.
    #[arg(long)]
    pub cost_free: bool,
    /// Optional `date,index_value` file to rebase over the simulated dates.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Experiment config; defaults to the config.toml beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: PathBuf,
    /// Panel date, YYYY-MM-DD.
    #[arg(long)]
    pub date: NaiveDate,
    /// Matrix CSV; the edge list goes beside it as `<stem>_edges.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(filter) = &cli.log {
        logger.parse_filters(filter);
    }
    logger.init();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Backtest(a) => commands::backtest(&a),
        Command::ExportHidden(a) => commands::export_hidden(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_parses_integers_and_grid() {
        assert_eq!(parse_k("30"), Ok(KChoice::Fixed(30)));
        assert_eq!(parse_k("grid"), Ok(KChoice::Grid));
        assert!(parse_k("0").is_err());
        assert!(parse_k("ten").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
