use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Entropic multi-marginal transport solver and matching-gap loss toolkit.
///
/// Every subcommand accepts `--config FILE` with a JSON object whose keys are
/// the long flag names (dashes replaced by underscores); flags on the command
/// line override file values.
///
/// Exit codes: 0 success, 1 invalid input, 2 numerical failure.
/// `POLYMATCH_THREADS` caps the number of worker threads.
#[derive(Parser, Debug)]
#[command(name = "polymatch", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the entropic problem for a cost tensor (PMT1 or nested JSON).
    ///
    /// Writes a JSON report with ot_value, iterations, delta (marginal deviation),
    /// converged and the dual potentials (n rows, k columns).
    Solve(SolveArgs),
    /// Score a PME1 embedding batch with the matching-gap loss.
    ///
    /// Writes a JSON report; `--grad` additionally stores the loss gradient
    /// as a PME1 file.
    M3g(M3gArgs),
    /// Projected gradient flow of the loss on the sphere.
    ///
    /// CSV columns: step,loss,delta,iters.
    Flow(FlowArgs),
    /// Train the toy encoder on synthetic multiview clusters.
    ///
    /// Writes JSON with final_train_loss, view_alignment, probe_accuracy and
    /// baseline_probe_accuracy.
    Train(TrainArgs),
    /// Time cost tensor plus solve over an (n, k, epsilon) grid.
    ///
    /// CSV columns: n,k,epsilon,iterations,wall_time,delta,converged.
    /// Exits with code 2 if a smaller epsilon needed fewer iterations than a
    /// larger one in the same (n, k) cell.
    Bench(BenchArgs),
    /// Compare the matching-gap loss with the pairwise baselines.
    ///
    /// With `--embeddings`, scores that batch under every loss; otherwise
    /// trains one encoder per loss on the same synthetic task. Writes JSON.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON file with default values for the other flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output path (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Cost tensor file
    #[arg(long, value_name = "FILE")]
    pub cost_file: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Marginal deviation tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Also write the coupling as a PMT1 file
    #[arg(long, value_name = "FILE")]
    pub coupling: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct M3gArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Embedding batch file (PME1)
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Multiway cost: cv or csd
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Write the gradient to this PME1 file
    #[arg(long, value_name = "FILE")]
    pub grad: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct FlowArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Named starting configuration (paper_fig1)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Write the final embeddings to this PME1 file
    #[arg(long, value_name = "FILE")]
    pub final_embeddings: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// m3g, infonce_pwe, infonce_ave, byol_pwe or byol_ave
    #[arg(long)]
    pub loss: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOptions,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainOptions {
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub samples_per_cluster: Option<usize>,
    #[arg(long)]
    pub test_per_cluster: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub view_noise: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub ema: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Comma-separated point counts
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Comma-separated view counts
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Comma-separated regularization strengths
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Skip cells whose tensor has more entries than this
    #[arg(long)]
    pub max_elements: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Score this PME1 batch instead of training
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Comma-separated subset of losses (default: all)
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOptions,
}
