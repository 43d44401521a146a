use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::ema::{EmaState, DEFAULT_EMA_DECAY, DEFAULT_EMA_FRACTION};
use super::model::{Denoiser, DenoiserShape};
use super::schedule::{q_sample, NoiseSchedule};
use super::DiffusionError;

/// One training example with its noise draw already fixed, so that the
/// loss is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedExample<T> {
    pub x0: Vec<T>,
    pub cond: Vec<T>,
    pub t: usize,
    pub eps: Vec<T>,
}

/// Mean over examples of the per-example mean squared noise error, and its
/// gradient.
fn loss_and_grad<T: Scalar>(
    model: &Denoiser<T>,
    examples: &[NoisedExample<T>],
    schedule: &NoiseSchedule<T>,
) -> Result<(T, Vec<T>), DiffusionError> {
    let mut grad = vec![T::zero(); model.param_count()];
    let mut loss = T::zero();
    let d = model.shape().latent_dim;
    let per_example = T::one() / T::of(examples.len() as f64);
    let per_dim = T::one() / T::of(d as f64);
    let two = T::of(2.0);
    let mut d_out = vec![T::zero(); d];
    for ex in examples {
        model.check_inputs(&ex.x0, &ex.cond)?;
        let x_t = q_sample(&ex.x0, ex.t, &ex.eps, schedule)?;
        let trace = model.forward(&x_t, ex.t, &ex.cond);
        let mut sq = T::zero();
        for k in 0..d {
            let r = trace.out[k] - ex.eps[k];
            sq = sq + r * r;
            d_out[k] = two * r * per_dim * per_example;
        }
        loss = loss + sq * per_dim * per_example;
        model.backward(&trace, &d_out, &mut grad);
    }
    Ok((loss, grad))
}

/// Batch loss and gradient accumulated over equal microbatches.
///
/// Each microbatch contributes its mean gradient; the results are summed
/// in order and divided by the microbatch count. With one microbatch this
/// is exactly the unaccumulated computation.
pub fn batch_gradient<T: Scalar>(
    model: &Denoiser<T>,
    batch: &[NoisedExample<T>],
    microbatch_size: usize,
    schedule: &NoiseSchedule<T>,
) -> Result<(T, Vec<T>), DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::InvalidConfig("empty batch".into()));
    }
    if microbatch_size == 0 || !batch.len().is_multiple_of(microbatch_size) {
        return Err(DiffusionError::InvalidConfig(format!(
            "microbatch size {microbatch_size} does not divide batch size {}",
            batch.len()
        )));
    }
    let chunks = batch.len() / microbatch_size;
    if chunks == 1 {
        return loss_and_grad(model, batch, schedule);
    }
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); model.param_count()];
    for micro in batch.chunks(microbatch_size) {
        let (l, g) = loss_and_grad(model, micro, schedule)?;
        loss = loss + l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc = *acc + v;
        }
    }
    let scale = T::one() / T::of(chunks as f64);
    grad.iter_mut().for_each(|g| *g = *g * scale);
    Ok((loss * scale, grad))
}

/// SGD with optional heavy-ball momentum: `v ← μv + g; θ ← θ − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: T, momentum: T, params: usize) -> Self {
        Sgd { learning_rate, momentum, velocity: vec![T::zero(); params] }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        if self.momentum == T::zero() {
            for (p, &g) in params.iter_mut().zip(grad) {
                *p = *p - self.learning_rate * g;
            }
            return;
        }
        for ((p, v), &g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = self.momentum * *v + g;
            *p = *p - self.learning_rate * *v;
        }
    }
}

fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
}

/// One optimizer update from a microbatch-accumulated gradient. Returns the
/// batch loss.
pub fn grad_step<T: Scalar>(
    model: &mut Denoiser<T>,
    optimizer: &mut Sgd<T>,
    batch: &[NoisedExample<T>],
    microbatch_size: usize,
    schedule: &NoiseSchedule<T>,
    step: usize,
) -> Result<T, DiffusionError> {
    let (loss, grad) = batch_gradient(model, batch, microbatch_size, schedule)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(DiffusionError::NonFiniteLoss {
            step,
            loss: loss.to_f64_lossy(),
            param_norm: norm(model.params()),
            grad_norm: norm(&grad),
        });
    }
    optimizer.step(model.params_mut(), &grad);
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(DiffusionError::NonFiniteLoss {
            step,
            loss: loss.to_f64_lossy(),
            param_norm: norm(model.params()),
            grad_norm: norm(&grad),
        });
    }
    Ok(loss)
}

fn default_momentum() -> f64 {
    0.9
}
fn default_fraction() -> f64 {
    1.0
}
fn default_timesteps() -> usize {
    100
}
fn default_beta_min() -> f64 {
    1e-4
}
fn default_beta_max() -> f64 {
    0.1
}
fn default_hidden() -> usize {
    64
}
fn default_time_dim() -> usize {
    16
}
fn default_ema_decay() -> f64 {
    DEFAULT_EMA_DECAY
}
fn default_ema_fraction() -> f64 {
    DEFAULT_EMA_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub microbatch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
    #[serde(default = "default_fraction")]
    pub dataset_fraction: f64,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_time_dim")]
    pub time_dim: usize,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    #[serde(default = "default_ema_fraction")]
    pub ema_fraction: f64,
}

impl TrainConfig {
    pub fn new(total_steps: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            total_steps,
            batch_size,
            microbatch_size: batch_size,
            learning_rate,
            momentum: default_momentum(),
            seed,
            dataset_fraction: default_fraction(),
            timesteps: default_timesteps(),
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
            hidden: default_hidden(),
            time_dim: default_time_dim(),
            ema_decay: default_ema_decay(),
            ema_fraction: default_ema_fraction(),
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |msg: String| Err(DiffusionError::InvalidConfig(msg));
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be positive".into());
        }
        if self.microbatch_size == 0 || !self.batch_size.is_multiple_of(self.microbatch_size) {
            return bad(format!("microbatch_size {} must divide batch_size {}", self.microbatch_size, self.batch_size));
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return bad(format!("dataset_fraction {} outside (0, 1]", self.dataset_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay {} outside (0, 1)", self.ema_decay));
        }
        if !(0.0..=1.0).contains(&self.ema_fraction) {
            return bad(format!("ema_fraction {} outside [0, 1]", self.ema_fraction));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        Ok(())
    }

    pub fn schedule<T: Scalar>(&self) -> Result<NoiseSchedule<T>, DiffusionError> {
        NoiseSchedule::linear(self.timesteps, self.beta_min, self.beta_max)
    }

    pub fn shape(&self, latent_dim: usize, cond_dim: usize) -> DenoiserShape {
        DenoiserShape { latent_dim, time_dim: self.time_dim, cond_dim, hidden: self.hidden }
    }

    /// Number of examples kept from a dataset of `n`: `⌈fraction · n⌉`, at
    /// least one.
    pub fn subset_size(&self, n: usize) -> usize {
        ((self.dataset_fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Denoiser<T>,
    pub ema: EmaState<T>,
    pub loss_curve: Vec<f64>,
    /// Indices into the input latents that were used for training.
    pub subset: Vec<usize>,
}

impl<T: Scalar> TrainOutcome<T> {
    /// Denoiser carrying the EMA shadow weights.
    pub fn ema_model(&self) -> Denoiser<T> {
        Denoiser::from_params(self.model.shape(), self.ema.shadow.clone()).expect("shadow matches model shape")
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) fn normal<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z)
}

/// Trains a denoiser on `latents` with per-example `conditions`.
///
/// All randomness comes from `config.seed`, so a run is bitwise
/// reproducible. Init and subset choice, batch indices, and timesteps plus
/// noise use separate ChaCha streams: runs that differ only in
/// `dataset_fraction` see identical timestep and noise draws.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    latents: &[Vec<T>],
    conditions: &[Vec<T>],
) -> Result<TrainOutcome<T>, DiffusionError> {
    config.validate()?;
    if latents.is_empty() {
        return Err(DiffusionError::InvalidConfig("no training latents".into()));
    }
    if conditions.len() != latents.len() {
        return Err(DiffusionError::ShapeMismatch { expected: latents.len(), got: conditions.len() });
    }
    let latent_dim = latents[0].len();
    let cond_dim = conditions[0].len();
    if let Some(bad) = latents.iter().find(|l| l.len() != latent_dim) {
        return Err(DiffusionError::ShapeMismatch { expected: latent_dim, got: bad.len() });
    }
    if let Some(bad) = conditions.iter().find(|c| c.len() != cond_dim) {
        return Err(DiffusionError::ShapeMismatch { expected: cond_dim, got: bad.len() });
    }

    let schedule = config.schedule::<T>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Denoiser::init(config.shape(latent_dim, cond_dim), rng.random());
    let mut order: Vec<usize> = (0..latents.len()).collect();
    order.shuffle(&mut rng);
    let mut picks = stream(config.seed, 1);
    let mut noise = stream(config.seed, 2);
    order.truncate(config.subset_size(latents.len()));

    let mut optimizer = Sgd::new(T::of(config.learning_rate), T::of(config.momentum), model.param_count());
    let mut ema = EmaState::scheduled(model.params(), T::of(config.ema_decay), config.total_steps, config.ema_fraction);
    let mut loss_curve = Vec::with_capacity(config.total_steps);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 1..=config.total_steps {
        batch.clear();
        for _ in 0..config.batch_size {
            let idx = order[picks.random_range(0..order.len())];
            let t = noise.random_range(1..=schedule.steps());
            let eps = (0..latent_dim).map(|_| normal::<T, _>(&mut noise)).collect();
            batch.push(NoisedExample { x0: latents[idx].clone(), cond: conditions[idx].clone(), t, eps });
        }
        let loss = grad_step(&mut model, &mut optimizer, &batch, config.microbatch_size, &schedule, step)?;
        loss_curve.push(loss.to_f64_lossy());
        ema.update(model.params(), step);
    }
    Ok(TrainOutcome { model, ema, loss_curve, subset: order })
}

/// Ancestral sampling: starts from `N(0, I)` and applies the reverse
/// update for `t = T..1`, adding `√β_t` noise on every step but the last.
pub fn sample<T: Scalar>(
    model: &Denoiser<T>,
    schedule: &NoiseSchedule<T>,
    n: usize,
    condition: &[T],
    seed: u64,
) -> Result<Vec<Vec<T>>, DiffusionError> {
    let dim = model.shape().latent_dim;
    model.check_inputs(&vec![T::zero(); dim], condition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x: Vec<T> = (0..dim).map(|_| normal::<T, _>(&mut rng)).collect();
        for t in (1..=schedule.steps()).rev() {
            let beta = schedule.beta(t)?;
            let alpha_bar = schedule.alpha_bar(t)?;
            let eps_hat = model.forward(&x, t, condition).out;
            let coef = beta / (T::one() - alpha_bar).sqrt();
            let inv_sqrt_alpha = T::one() / (T::one() - beta).sqrt();
            let sigma = beta.sqrt();
            for k in 0..dim {
                let mean = (x[k] - coef * eps_hat[k]) * inv_sqrt_alpha;
                x[k] = if t > 1 { mean + sigma * normal::<T, _>(&mut rng) } else { mean };
            }
        }
        out.push(x);
    }
    Ok(out)
}
