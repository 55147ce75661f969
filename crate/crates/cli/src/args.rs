use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ilvr_core::{Kernel, ScheduleConfig, SigmaMode};
use serde::{Deserialize, Serialize};

/// Iterative Latent Variable Refinement at desk scale.
#[derive(Debug, Parser)]
#[command(name = "ilvr", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the neural noise predictor on a mixture file or image directory.
    Train(TrainArgs),
    /// Draw unconditional samples.
    Sample(SampleArgs),
    /// Draw reference-conditioned samples, optionally sweeping the factor.
    Ilvr(IlvrArgs),
    /// Diversity per reference group and a Fréchet distance to real samples.
    Eval(EvalArgs),
    /// Write a built-in toy mixture and optional direct draws from it.
    Toy(ToyArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
    /// Serve the HTTP job API.
    Serve(ServeArgs),
}

/// Diffusion schedule: linear betas, rescaled so short chains still end
/// near pure noise.
#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ScheduleArgs {
    /// Number of diffusion steps T.
    #[arg(long = "timesteps", default_value_t = 200)]
    pub timesteps: usize,
    /// First beta; defaults to 1e-4 * 1000 / T.
    #[arg(long)]
    pub beta_start: Option<f64>,
    /// Last beta; defaults to 0.02 * 1000 / T.
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// Reverse-step variance: posterior or beta.
    #[arg(long, default_value = "posterior")]
    pub sigma_mode: SigmaMode,
}

impl Default for ScheduleArgs {
    fn default() -> Self {
        Self {
            timesteps: 200,
            beta_start: None,
            beta_end: None,
            sigma_mode: SigmaMode::Posterior,
        }
    }
}

impl ScheduleArgs {
    pub fn config(&self) -> ScheduleConfig {
        let desk = ScheduleConfig::desk(self.timesteps);
        ScheduleConfig {
            steps: self.timesteps,
            beta_start: self.beta_start.unwrap_or(desk.beta_start),
            beta_end: self.beta_end.unwrap_or(desk.beta_end),
            sigma_mode: self.sigma_mode,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct TrainArgs {
    /// Mixture JSON file or directory of .ppm/.pgm/.ilvt samples.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, loss curve and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Optimizer steps.
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Hidden width (dense) or channel count (conv).
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Time-embedding size; must be even.
    #[arg(long, default_value_t = 16)]
    pub embed: usize,
    /// Size of the fixed held-out batch scored before and after training.
    #[arg(long, default_value_t = 512)]
    pub probe: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(default)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SampleArgs {
    /// Checkpoint path or `analytic:<mixture.json>`.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// Also write float tensors next to image samples.
    #[arg(long)]
    #[serde(default)]
    pub raw: bool,
    #[command(flatten)]
    #[serde(default)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct IlvrArgs {
    /// Checkpoint path or `analytic:<mixture.json>`.
    #[arg(long)]
    pub model: String,
    /// Reference image (.ppm/.pgm) or tensor file (.ilvt).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Downsampling factor N; a comma-separated list runs a sweep.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub factor: Vec<usize>,
    /// box (verification), bilinear, bicubic (demo), lanczos2, lanczos3.
    #[arg(long, default_value = "box")]
    pub kernel: Kernel,
    /// Refinement is applied while t > stop-step.
    #[arg(long, default_value_t = 0)]
    pub stop_step: usize,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub raw: bool,
    #[command(flatten)]
    #[serde(default)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct EvalArgs {
    /// Sample directory; each subdirectory is one reference group.
    #[arg(long)]
    pub samples: PathBuf,
    /// Group size when the directory is flat.
    #[arg(long, default_value_t = 10)]
    pub group_size: usize,
    /// Directory of real samples for the Fréchet distance.
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ToyArgs {
    /// planar3, planar2, patterns or textured.
    #[arg(long)]
    pub name: String,
    /// Image side for the pattern domains.
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of direct draws to write next to the mixture.
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the re-run outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Fail unless every output is byte-identical to the recorded one.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Directory of mixture .json files and .ilvn checkpoints.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Sampler threads; defaults to available parallelism, at most 4.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write finished jobs (samples, reference and job.json) here.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    pub allow_origin: Option<String>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}
