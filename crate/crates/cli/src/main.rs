mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use soce_core::weightgrid::{parse_weight, Weight};
use soce_core::{Error, ErrorClass};

const EXIT_VALIDATION: u8 = 2;
const EXIT_COMPATIBILITY: u8 = 3;
const EXIT_EVALUATOR: u8 = 4;
const EXIT_USAGE: u8 = 64;

/// Soup of Category Experts: pick per-category expert models from a
/// leaderboard, search soup weights, and write the averaged checkpoint.
#[derive(Parser, Debug)]
#[command(name = "soce", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Correlation threshold: a category is weak if |rho| < tau for some partner.
    #[arg(long, global = true, default_value_t = 0.5)]
    pub tau: f64,
    /// Weight lattice step, e.g. 0.1 or 1/10.
    #[arg(long, global = true, default_value = "0.1", value_parser = weight)]
    pub step: Weight,
    /// Smallest weight any expert may receive.
    #[arg(long = "min-weight", global = true, default_value = "0.1", value_parser = weight)]
    pub min_weight: Weight,
    /// Largest weight any expert may receive.
    #[arg(long = "max-weight", global = true, default_value = "0.9", value_parser = weight)]
    pub max_weight: Weight,
    /// External scorer, run as `<cmd> --checkpoint <path> --categories a,b`.
    #[arg(long = "evaluator-cmd", global = true, conflicts_with = "synthetic_config")]
    pub evaluator_cmd: Option<String>,
    /// Synthetic landscape and model parameter vectors (JSON).
    #[arg(long = "synthetic-config", global = true)]
    pub synthetic_config: Option<PathBuf>,
    /// Directory holding `<model>.safetensors` for every model id.
    #[arg(long = "checkpoint-dir", global = true)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Worker threads for parallel evaluation; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Render a plain-text table instead of JSON.
    #[arg(long, global = true)]
    pub table: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn weight(s: &str) -> Result<Weight, String> {
    parse_weight(s).map_err(|e| e.to_string())
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Category correlation matrix and the weakly-correlated set.
    Correlations {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Per-category experts over the weakly-correlated set.
    Select {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Exhaustive weight search over the experts (or over --models).
    Search {
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Comma-separated model ids to search over instead of the selected experts.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Average checkpoints according to a recipe or a run report.
    Soup {
        /// Recipe JSON, or a run report whose recipe is used.
        #[arg(long)]
        recipe: PathBuf,
    },
    /// Full pipeline: correlations, selection, search, soup.
    Run {
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Where to write the souped checkpoint.
        #[arg(long = "soup-out")]
        soup_out: Option<PathBuf>,
    },
    /// Shapley attribution over model groups.
    Shapley {
        /// Explicit game: players plus coalition values (JSON).
        #[arg(long, conflicts_with = "players")]
        game: Option<PathBuf>,
        /// Player groups; models within a group are joined with '+', e.g. M1+M2.
        #[arg(long = "player", required_unless_present = "game")]
        players: Vec<String>,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
        /// Categories to request from --evaluator-cmd (comma-separated).
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
    },
    /// Retention, new-solve and single-failure completion rates.
    Winrate {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        soup: String,
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<String>,
    },
    /// Change in mean category correlation between two populations.
    CorrShift {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
    },
    /// Uniform soup of all candidates vs of the experts vs the searched soup.
    Baselines {
        #[arg(long)]
        scores: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Permutations up to 12 players, subsets beyond.
    Auto,
    Permutation,
    Subset,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation | ErrorClass::Io => EXIT_VALIDATION,
        ErrorClass::Compatibility => EXIT_COMPATIBILITY,
        ErrorClass::Evaluator => EXIT_EVALUATOR,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(report) = incompatibility(&e) {
                eprint!("{}", report.render_table());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn incompatibility(e: &Error) -> Option<&soce_core::soup::CompatibilityReport> {
    match e {
        Error::Incompatible(r) => Some(r),
        Error::RecipeEvaluation { source, .. } | Error::CoalitionEvaluation { source, .. } => {
            incompatibility(source)
        }
        _ => None,
    }
}
