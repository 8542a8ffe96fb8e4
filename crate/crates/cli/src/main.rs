//! `bgmoe`: simulate, fit, select, predict, evaluate and plot-grid
//! front end for bivariate gamma mixture-of-experts models.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use bgmoe::{Error, ErrorCategory};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bgmoe", version, about = "Bivariate gamma mixture-of-experts regression")]
struct Cli {
    /// Sectioned key-value run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a data set from one of the two simulation designs.
    Simulate(SimulateArgs),
    /// Fit one model specification by EM.
    Fit(FitArgs),
    /// Forward stepwise search over components, type and covariates.
    Select(SelectArgs),
    /// Predicted means, component probabilities and parameters per row.
    Predict(PredictArgs),
    /// Score a prediction file against observed responses.
    Evaluate(EvaluateArgs),
    /// Bivariate gamma density on a rectangular grid.
    Density(DensityArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub study: u8,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Default)]
pub struct EmArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Stop on the Aitken-extrapolated log-likelihood.
    #[arg(long)]
    pub aitken: bool,
    /// Relative tolerance of the latent-variable quadrature.
    #[arg(long)]
    pub quad_tol: Option<f64>,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model type: gating, shape and rate letters (two letters when G = 1).
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub gating: Option<String>,
    #[arg(long)]
    pub alpha1: Option<String>,
    #[arg(long)]
    pub alpha2: Option<String>,
    #[arg(long)]
    pub alpha3: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Iteration trace of the winning restart (default: `<out>.trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidate covariates for every network.
    #[arg(long)]
    pub candidates: Option<String>,
    #[arg(long)]
    pub gating_candidates: Option<String>,
    #[arg(long)]
    pub alpha1_candidates: Option<String>,
    #[arg(long)]
    pub alpha2_candidates: Option<String>,
    #[arg(long)]
    pub alpha3_candidates: Option<String>,
    #[arg(long)]
    pub beta_candidates: Option<String>,
    #[arg(long)]
    pub max_g: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// aic, bic or icl.
    #[arg(long)]
    pub criterion: Option<String>,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training data for the univariate gamma GLM baseline columns.
    #[arg(long)]
    pub glm_train: Option<PathBuf>,
    /// GLM covariates (default: every covariate the model uses).
    #[arg(long)]
    pub glm_covariates: Option<String>,
    #[arg(long)]
    pub quad_tol: Option<f64>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub actual: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DensityArgs {
    /// `alpha1,alpha2,alpha3,beta`.
    #[arg(long)]
    pub params: String,
    /// `y1min:y1max:steps,y2min:y2max:steps`; values at cell midpoints.
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quad_tol: Option<f64>,
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn category_name(category: ErrorCategory) -> &'static str {
    match category {
        ErrorCategory::Usage => "usage",
        ErrorCategory::Data => "data",
        ErrorCategory::Numerical => "numerical",
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fail(category: ErrorCategory, message: &str) -> ExitCode {
    eprintln!("error[{}]: {}", category_name(category), one_line(message));
    ExitCode::from(exit_code(category))
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("BGMOE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("BGMOE_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            return fail(ErrorCategory::Usage, first.trim_start_matches("error: "));
        }
    };
    if let Err(e) = configure_threads() {
        return fail(e.category(), &e.to_string());
    }
    let result = commands::load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Simulate(a) => commands::simulate(a, &cfg),
        Command::Fit(a) => commands::fit(a, &cfg),
        Command::Select(a) => commands::select(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a, &cfg),
        Command::Density(a) => commands::density(a, &cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.category(), &e.to_string()),
    }
}
