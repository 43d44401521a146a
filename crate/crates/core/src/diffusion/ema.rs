use crate::scalar::Scalar;

pub const DEFAULT_EMA_DECAY: f64 = 0.9999;
/// Share of the run, at the end, during which the EMA actually averages.
pub const DEFAULT_EMA_FRACTION: f64 = 0.035;

/// First step at which averaging starts: `⌈(1 − fraction) · total_steps⌉`,
/// clamped to `1..=total_steps`.
pub fn activation_step(total_steps: usize, fraction: f64) -> usize {
    let raw = (1.0 - fraction) * total_steps as f64;
    let nearest = raw.round();
    // Snap values within rounding noise of an integer before taking the ceiling.
    let ceil = if (raw - nearest).abs() < 1e-9 * raw.abs().max(1.0) { nearest } else { raw.ceil() };
    (ceil.max(1.0) as usize).min(total_steps.max(1))
}

/// Weight the shadow still gives to its state from `steps` active updates
/// ago: `decay^steps`.
pub fn window_mass(decay: f64, steps: u64) -> f64 {
    decay.powf(steps as f64)
}

/// Shadow weights that copy θ until `activation_step`, then follow
/// `shadow ← d·shadow + (1 − d)·θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState<T> {
    pub shadow: Vec<T>,
    pub decay: T,
    pub activation_step: usize,
}

impl<T: Scalar> EmaState<T> {
    pub fn new(theta: &[T], decay: T, activation_step: usize) -> Self {
        EmaState { shadow: theta.to_vec(), decay, activation_step }
    }

    pub fn scheduled(theta: &[T], decay: T, total_steps: usize, fraction: f64) -> Self {
        Self::new(theta, decay, activation_step(total_steps, fraction))
    }

    /// EMA that averages over the final `window` steps of the run.
    pub fn with_window(theta: &[T], decay: T, total_steps: usize, window: usize) -> Self {
        let start = (total_steps + 1).saturating_sub(window).max(1);
        Self::new(theta, decay, start)
    }

    pub fn is_active(&self, step: usize) -> bool {
        step >= self.activation_step
    }

    pub fn update(&mut self, theta: &[T], step: usize) {
        assert_eq!(theta.len(), self.shadow.len(), "EMA shape mismatch");
        if !self.is_active(step) {
            self.shadow.copy_from_slice(theta);
            return;
        }
        let keep = self.decay;
        let take = T::one() - keep;
        for (s, &p) in self.shadow.iter_mut().zip(theta) {
            *s = keep * *s + take * p;
        }
    }
}

/// Functional form of [`EmaState::update`].
pub fn ema_update<T: Scalar>(ema: &EmaState<T>, theta: &[T], step: usize) -> EmaState<T> {
    let mut next = ema.clone();
    next.update(theta, step);
    next
}
