//! Tooling for training text-to-image diffusion models on openly licensed
//! images.
//!
//! The crate is organised as one module per pipeline stage:
//!
//! * [`catalog`]: license classification and commercial / non-commercial
//!   partitioning of image metadata.
//! * [`telephoning`]: synthetic captioning through an external captioner
//!   service, with caching, retries and caption statistics.
//! * [`latent_cache`]: checksummed binary shards of precomputed latents.
//! * [`diffusion`]: a small DDPM trainer with microbatch accumulation and
//!   scheduled EMA, plus the data-scarcity sweep.
//! * [`metrics`]: FID, KID, CLIP-FID, CLIP score and kernel MMD.
//! * [`human_eval`]: preference rates, Wilson intervals and exact binomial
//!   parity tests.
//! * [`planner`]: training cost, speedup and dataset-capacity arithmetic.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 64-bit instantiation used by the trainer and CLI.

pub mod catalog;
pub mod diffusion;
pub mod fnv;
pub mod human_eval;
pub mod latent_cache;
pub mod linalg;
pub mod metrics;
pub mod planner;
pub mod scalar;
pub mod telephoning;

pub use scalar::Scalar;

/// 64-bit feature matrix.
pub type FeatureSet64 = metrics::FeatureSet<f64>;
/// 32-bit feature matrix, the on-disk feature precision.
pub type FeatureSet32 = metrics::FeatureSet<f32>;
pub type GaussianStats64 = metrics::GaussianStats<f64>;
pub type GaussianStats32 = metrics::GaussianStats<f32>;
pub type NoiseSchedule64 = diffusion::NoiseSchedule<f64>;
pub type Denoiser64 = diffusion::Denoiser<f64>;
pub type EmaState64 = diffusion::EmaState<f64>;
pub type EmaState32 = diffusion::EmaState<f32>;
