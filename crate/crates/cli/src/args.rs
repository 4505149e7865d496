//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "trialscreen", version, about = "Clinical-trial eligibility pre-screening")]
pub struct Cli {
    /// TOML file with default values for any flag. For `serve` it is the
    /// service configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect trials for each profile from a fixture file or a registry.
    Ingest(IngestArgs),
    /// Split eligibility texts into criteria.
    Parse(ParseArgs),
    /// Screen profiles against trials and write one run export per profile.
    Screen(ScreenArgs),
    /// Build review queues and optionally apply decisions.
    Queue(QueueArgs),
    /// Score run exports against gold annotations.
    Evaluate(EvaluateArgs),
    /// Repeat screening and report the spread of metrics.
    Stochasticity(StochasticityArgs),
    /// Run the HTTP service.
    Serve,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Line-delimited trial fixture used as the source.
    #[arg(long, conflicts_with = "registry")]
    pub trials: Option<PathBuf>,
    /// Registry endpoint TOML used as the source.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub max_results: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Segmentation rules replacing the built-in set.
    #[arg(long)]
    pub parser_rules: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApiStyleChoice {
    Completions,
    Chat,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Mock rule file.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Recorded completions: a completions file or a directory of run
    /// exports.
    #[arg(long)]
    pub replay_log: Option<PathBuf>,
    #[arg(long)]
    pub remote_url: Option<String>,
    #[arg(long, value_enum)]
    pub api_style: Option<ApiStyleChoice>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    /// Ask for reasoning and label in one call.
    #[arg(long)]
    pub combined: bool,
    /// Only screen trials listing the profile's condition code.
    #[arg(long)]
    pub match_condition: bool,
    /// Segmentation rules replacing the built-in set.
    #[arg(long)]
    pub parser_rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Screen only these profiles. Repeatable.
    #[arg(long = "profile")]
    pub profile_ids: Vec<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueueArgs {
    /// A run export or a directory of run exports.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Line-delimited review decisions. Lines may carry a `run_id`.
    #[arg(long, conflicts_with = "oracle")]
    pub decisions: Option<PathBuf>,
    /// Resolve every queue with the decisions the gold file implies.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, default_value = "oracle")]
    pub reviewer: String,
    /// Write updated exports here instead of in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run exports or directories of run exports. Repeatable.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StochasticityArgs {
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long = "profile")]
    pub profile_ids: Vec<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Temperature settings to compare. Repeatable.
    #[arg(long = "temperature")]
    pub temperatures: Vec<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Also write every run export under `<out>/runs`.
    #[arg(long)]
    pub keep_runs: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
