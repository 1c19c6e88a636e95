//! `annoqual` command-line entry point.
//!
//! Every subcommand prints a single JSON summary line as the last line of
//! stdout; tables and logs go to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "annoqual", version, about = "Annotation quality control from stochastic classifier predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file, written atomically.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank instances by sample variance and flag the most uncertain.
    Triage(TriageArgs),
    /// Remove the most uncertain training labels using cross-fitted bootstrap predictions.
    Clean(CleanArgs),
    /// Draw bootstrap predictions for target texts from a bag-of-words model.
    Bootstrap(BootstrapArgs),
    /// Fit or apply the mixture-model ensemble.
    Ensemble {
        #[command(subcommand)]
        action: EnsembleAction,
    },
    /// Classification metrics for ensemble frames or removal budgets.
    Eval(EvalArgs),
    /// Calibration report, optionally with mixture-model recalibration.
    Calibrate(CalibrateArgs),
    /// Generate synthetic fixtures.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// Serve the re-annotation API over a project directory.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("budget").required(true).args(["fraction", "count"])))]
struct TriageArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Share of instances to flag, in [0, 1).
    #[arg(long)]
    fraction: Option<f64>,
    /// Number of instances to flag.
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Nb,
    Lr,
}

#[derive(Debug, Args)]
struct CleanArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.15)]
    fraction: f64,
    /// Bootstrap samples per instance.
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = Model::Nb)]
    model: Model,
    /// Also write the removed instances with their variances.
    #[arg(long)]
    removed: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = Model::Nb)]
    model: Model,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum EnsembleAction {
    /// Fit per-class mixtures on a labelled frame.
    Fit(FitArgs),
    /// Add the ensemble posterior as an extra member of a frame.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
struct GibbsArgs {
    /// Mixture components per class.
    #[arg(long, default_value_t = 1)]
    components: usize,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 2)]
    thinning: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    frame: PathBuf,
    /// Labelled frame for choosing variance inflation.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0])]
    grid: Vec<f64>,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    frame: PathBuf,
    /// Model id for the ensemble column.
    #[arg(long, default_value = "mm")]
    name: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["frame", "samples"])))]
struct EvalArgs {
    /// Labelled frame; every member is scored.
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Sample matrix scored against `--dataset` after removing uncertain instances.
    #[arg(long, requires = "dataset")]
    samples: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.5, 0.7])]
    budgets: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    positive: usize,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Labelled frame to report on.
    #[arg(long)]
    frame: PathBuf,
    /// Member to calibrate; defaults to the first.
    #[arg(long)]
    model: Option<String>,
    /// Labelled frame to fit the recalibration on.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    positive: usize,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum SynthKind {
    /// Labelled ensemble frame from correlated Gaussian log-odds, or from a generator spec.
    Frame(SynthFrameArgs),
    /// Labelled toy text corpus with injected label noise.
    Text(SynthTextArgs),
    /// Binary sample matrix with heterogeneous variance.
    Samples(SynthSamplesArgs),
}

#[derive(Debug, Args)]
struct SynthFrameArgs {
    /// Generator spec document; overrides the shape flags and `--n`, while `--seed` still applies.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Per-member log-odds shift; the number of entries sets the member count.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 0.0, 0.0])]
    shifts: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    #[arg(long, default_value_t = 0.5)]
    correlation: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthTextArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Fraction of labels flipped.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Concentrate flips on ambiguous texts with weight (1 - clarity)^power; 0 flips uniformly.
    #[arg(long, default_value_t = 0.0)]
    power: f64,
    #[arg(long, default_value_t = 0.5)]
    positive_rate: f64,
    #[arg(long, default_value_t = 6)]
    min_len: usize,
    #[arg(long, default_value_t = 14)]
    max_len: usize,
    #[arg(long, default_value = "doc")]
    prefix: String,
    /// Also write the corpus with its pre-noise labels.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthSamplesArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "ANNOQUAL_PROJECT")]
    project: PathBuf,
    #[arg(long, env = "ANNOQUAL_LISTEN", default_value = "127.0.0.1:8080")]
    listen: std::net::SocketAddr,
    /// auto, mm or mcd.
    #[arg(long, env = "ANNOQUAL_HINT_SOURCE", default_value = "auto")]
    hint_source: annoqual_service::HintMode,
    /// Share of unresolved instances flagged on each recompute.
    #[arg(long, env = "ANNOQUAL_FRACTION", default_value_t = 0.1)]
    fraction: f64,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut message = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !message.contains(&text) {
                    if !message.is_empty() {
                        message.push_str(": ");
                    }
                    message.push_str(&text);
                }
            }
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
