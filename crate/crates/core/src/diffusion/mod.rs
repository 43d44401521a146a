//! Desk-scale DDPM over cached latents.
//!
//! The denoiser is a two-hidden-layer perceptron with hand-written
//! backpropagation, trained on the epsilon-prediction objective. Training
//! supports microbatch gradient accumulation and an EMA of the weights that
//! only starts averaging near the end of the run.

mod checkpoint;
mod ema;
mod model;
pub mod scarcity;
mod schedule;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use ema::{activation_step, ema_update, window_mass, EmaState, DEFAULT_EMA_DECAY, DEFAULT_EMA_FRACTION};
pub use model::{caption_embedding, time_embedding, Denoiser, DenoiserShape, ParamGroup};
pub use schedule::{q_sample, NoiseSchedule};
pub use train::{batch_gradient, grad_step, sample, train, NoisedExample, Sgd, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("timestep {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at step {step} (param norm {param_norm}, grad norm {grad_norm})")]
    NonFiniteLoss { step: usize, loss: f64, param_norm: f64, grad_norm: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
