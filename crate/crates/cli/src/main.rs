//! `nms`: generate benchmark data, train and audit metriplectic models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod io;

use config::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "nms", version, about = "Metriplectic model training harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark system and write a dataset CSV.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint (or the exact system) on a dataset.
    Eval(EvalArgs),
    /// Integrate a checkpointed model from an initial condition.
    Rollout(RolloutArgs),
    /// Structural audit of a checkpoint or a freshly initialized model.
    Check(CheckArgs),
    /// Parameter counts and vector field timings against dimension.
    Scaling(ScalingArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverFlags {
    /// `dopri5` or `rk4`.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    /// Fixed step for rk4.
    #[arg(long = "solver-dt")]
    pub solver_dt: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// tgc, tdp, dno1, dno2, rod or rodN.
    #[arg(long)]
    pub system: String,
    #[arg(long, default_value_t = 0.001)]
    pub dt: f64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `temporal:T_TRAIN,T_VAL,T_TEST` or `traj:TRAIN_FRAC,VAL_FRAC`.
    #[arg(long)]
    pub split: Option<String>,
    /// Initial condition as comma-separated values; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub ic: Vec<String>,
    /// Number of random initial conditions drawn from the system's sampler.
    #[arg(long)]
    pub n_ics: Option<usize>,
    /// Keep every k-th row.
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss curve CSV; defaults next to the checkpoint.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// `windowed` or `origin`.
    #[arg(long)]
    pub mode: Option<String>,
    /// `all`, `q,p` or coordinate indices such as `0,1`.
    #[arg(long)]
    pub observe: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rollout_len: Option<usize>,
    #[arg(long)]
    pub max_offset: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub val_every: Option<usize>,
    /// `mse` or `mae`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Hidden widths, comma-separated.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub hidden_s: Option<String>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the dataset's own system instead of a checkpoint.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub part: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-segment truth / prediction CSVs.
    #[arg(long)]
    pub traj_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub ic: String,
    #[arg(long)]
    pub horizon: f64,
    /// Output rows including the initial one.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// State dimension of a fresh model (when no checkpoint is given).
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value = "10")]
    pub hidden: String,
    /// Random states to audit.
    #[arg(long, default_value_t = 100)]
    pub states: usize,
    /// States are drawn uniformly from `[-scale, scale]^n`.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ScalingArgs {
    #[arg(long, default_value = "10,20,30,50")]
    pub n_list: String,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NMS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Rollout(a) => commands::rollout(&a),
        Command::Check(a) => commands::check(&a),
        Command::Scaling(a) => commands::scaling(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
