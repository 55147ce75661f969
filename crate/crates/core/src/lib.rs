//! Diffusion sampling laboratory: variance schedules, low-pass operators,
//! analytic and neural noise predictors, ancestral and ILVR samplers,
//! desk-scale evaluation metrics and on-disk formats.

pub mod denoise;
pub mod error;
pub mod lowpass;
pub mod metrics;
pub mod sampler;
pub mod schedule;
pub mod tensorio;
pub mod toy;

pub use denoise::{DenoiserModel, GaussianMixture, NeuralDenoiser};
pub use error::{Error, Result};
pub use lowpass::{Kernel, LowPassOp};
pub use metrics::{frechet_pixel_distance, lowfreq_error, pairwise_diversity, EvalReport};
pub use sampler::{sample_ilvr, sample_unconditional, IlvrConfig, IlvrSampler};
pub use schedule::{q_sample_abar, Schedule, ScheduleConfig, SigmaMode};

/// Dense real tensor. Images are `(C, H, W)`; point data is rank 1.
pub type Tensor = ndarray::ArrayD<f64>;
