//! `simexplain` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use simexplain::engine::BackboneSpec;
use simexplain::eval::{DatasetConfig, MethodSettings};
use simexplain::Error;

/// Game-theoretic explanations for an image similarity engine.
#[derive(Parser, Debug)]
#[command(name = "simexplain", version)]
struct Cli {
    /// JSON file supplying defaults for the subcommand's options. Flags
    /// given on the command line take precedence; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explain one image pair and write records plus heatmap overlays.
    Explain(ExplainArgs),
    /// Run the censoring evaluation over a dataset.
    Eval(EvalArgs),
    /// Compare Shapley-Taylor estimators against exact indices on random games.
    Converge(ConvergeArgs),
    /// Write a synthetic paired-image dataset.
    GenDataset(GenDatasetArgs),
    /// Exact computations on a tabular game in JSON.
    Game(GameArgs),
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct ExplainArgs {
    /// Query image (binary PPM).
    #[arg(long)]
    query: Option<PathBuf>,
    /// Retrieved image (binary PPM).
    #[arg(long)]
    retrieved: Option<PathBuf>,
    /// sam, lime, kernel_shap or sbsm.
    #[arg(long)]
    method: Option<String>,
    /// marginal, joint or both [default: both].
    #[arg(long)]
    mode: Option<String>,
    /// Side explained in marginal mode: query, retrieved or both [default: query].
    #[arg(long)]
    side: Option<String>,
    /// Evaluation budget for LIME and Kernel SHAP in both modes.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Superpixel grid rows.
    #[arg(long)]
    rows: Option<usize>,
    /// Superpixel grid columns.
    #[arg(long)]
    cols: Option<usize>,
    /// Binary PGM region of the query projected in the joint overlay [default: whole image].
    #[arg(long)]
    query_mask: Option<PathBuf>,
    /// Tabulate the joint game for Kernel SHAP instead of sampling.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    exact: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    engine_seed: Option<u64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(skip)]
    engine: Option<BackboneSpec>,
    #[arg(skip)]
    settings: Option<MethodSettings>,
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct EvalArgs {
    /// Dataset directory written by gen-dataset; generated in memory when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Pairs to generate when no dataset directory is given [default: 50].
    #[arg(long)]
    count: Option<usize>,
    /// Seed of the generated dataset [default: 0].
    #[arg(long)]
    dataset_seed: Option<u64>,
    /// Comma-separated methods [default: sam,lime,kernel_shap,sbsm].
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Seed for explainers and random baselines [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Random-attention draws per baseline row [default: 10].
    #[arg(long)]
    random_seeds: Option<usize>,
    /// Fraction of query pixels censored in marginal mode [default: 0.2].
    #[arg(long)]
    fraction: Option<f64>,
    /// Also write a joint-mode timing report.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    timing: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    engine_seed: Option<u64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(skip)]
    engine: Option<BackboneSpec>,
    #[arg(skip)]
    settings: Option<MethodSettings>,
    #[arg(skip)]
    synthetic: Option<DatasetConfig>,
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct ConvergeArgs {
    /// Players per random game, at most 12 [default: 8].
    #[arg(long)]
    n: Option<usize>,
    /// Random games [default: 20].
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated increasing budgets [default: 64,128,256].
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; a JSON summary is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct GenDatasetArgs {
    /// Pairs to generate [default: 50].
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(skip)]
    synthetic: Option<DatasetConfig>,
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct GameArgs {
    /// dividends, shapley or shapley-taylor.
    action: Option<String>,
    /// Game JSON: {"n": 2, "values": {"": 0, "0": 1, "1": 2, "0,1": 3}}.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Interaction order for shapley-taylor [default: 2].
    #[arg(long)]
    k: Option<usize>,
    /// Output path [default: standard output].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("CE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Error> {
    threads()?;
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let file = |name: &str| config::section(file.as_ref(), name);
    match cli.command {
        Command::Explain(a) => commands::explain(config::resolve(&a, file("explain")?)?),
        Command::Eval(a) => commands::eval(config::resolve(&a, file("eval")?)?),
        Command::Converge(a) => commands::converge(config::resolve(&a, file("converge")?)?),
        Command::GenDataset(a) => commands::gen_dataset(config::resolve(&a, file("gen-dataset")?)?),
        Command::Game(a) => commands::game(config::resolve(&a, file("game")?)?),
    }
}

fn report(kind: &str, message: &str) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => return report("usage", e.to_string().trim()),
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.kind(), &e.to_string()),
    }
}
