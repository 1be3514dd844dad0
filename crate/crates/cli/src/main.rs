use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "hindsight",
    version,
    about = "Potential-based online allocation: simulate, solve in hindsight, learn, evaluate"
)]
pub struct Cli {
    /// TOML run configuration. Falls back to $HINDSIGHT_CONFIG, then built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic base trajectory.
    Generate(GenerateArgs),
    /// Draw semi-synthetic trajectories from a source trajectory.
    Augment(AugmentArgs),
    /// Solve a trajectory in hindsight; writes matches and the total as CSV.
    Oracle(OracleArgs),
    /// Fit a potential (or CAS score) by imitating the hindsight oracle.
    Train(TrainArgs),
    /// Fit linear weights by black-box search on simulated utility.
    Blackbox(BlackboxArgs),
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run one policy over a trajectory.
    PolicyEval(PolicyEvalArgs),
    /// Tabulate policies against the hindsight bound over several trajectories.
    Report(ReportArgs),
    /// Run a staged experiment manifest.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 30)]
    pub horizon_days: i64,
    /// Overrides population.rng_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub subhorizon_days: u32,
    /// Window for the donor/patient volume bounds (default: the sub-horizon).
    #[arg(long)]
    pub window_days: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of draws. With more than one, `--out` is a directory.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// CSV destination (default: stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training trajectories.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// blood4, blood_region13, match_state34, or cas14.
    #[arg(long, default_value = "blood4")]
    pub features: String,
    /// hinge, pairwise, or listwise (overrides train.loss).
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Hidden layer widths, e.g. `64,32`. Empty for a linear model.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub out_model: PathBuf,
}

#[derive(Args, Debug)]
pub struct BlackboxArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value = "blood4")]
    pub features: String,
    /// Objective evaluations (overrides blackbox.budget).
    #[arg(long)]
    pub budget: Option<usize>,
    /// Search dimension; must equal the feature dimension when given.
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_model: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Trajectory supplying the batch (default: a small generated one).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "blood4")]
    pub features: String,
    /// Loss to check; all three when omitted.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct PolicyEvalArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// `myopic`, `status_quo`, or a model file path.
    #[arg(long, short)]
    pub policy: String,
    /// Matches CSV destination.
    #[arg(long)]
    pub matches_out: Option<PathBuf>,
    /// Metrics CSV destination.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub trajectories: Vec<PathBuf>,
    /// `myopic`, `status_quo`, or `NAME=MODEL_PATH`; repeatable.
    #[arg(long = "policy", short, required = true)]
    pub policies: Vec<String>,
    /// CSV destination (default: stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Manifest TOML.
    pub manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the manifest's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

/// The error chain joined with `: `, skipping causes already quoted by the
/// message above them.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}
