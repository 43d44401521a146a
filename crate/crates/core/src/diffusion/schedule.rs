use crate::scalar::Scalar;

use super::DiffusionError;

/// Linear beta schedule and its cumulative products. Steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alpha_bars: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidRange("at least one step is required".into()));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(DiffusionError::InvalidRange(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas: Vec<T> = (0..steps)
            .map(|i| {
                let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                T::of(beta_min + (beta_max - beta_min) * frac)
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<T>) -> Result<Self, DiffusionError> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > T::zero() && b < T::one())) {
            return Err(DiffusionError::InvalidRange("every beta must lie in (0, 1)".into()));
        }
        let mut acc = T::one();
        let alpha_bars = betas
            .iter()
            .map(|&b| {
                acc = acc * (T::one() - b);
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    fn index(&self, t: usize) -> Result<usize, DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<T, DiffusionError> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<T, DiffusionError> {
        Ok(self.alpha_bars[self.index(t)?])
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · ε`, elementwise.
pub fn q_sample<T: Scalar>(
    x0: &[T],
    t: usize,
    eps: &[T],
    schedule: &NoiseSchedule<T>,
) -> Result<Vec<T>, DiffusionError> {
    if x0.len() != eps.len() {
        return Err(DiffusionError::ShapeMismatch { expected: x0.len(), got: eps.len() });
    }
    let ab = schedule.alpha_bar(t)?;
    let (signal, noise) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| signal * x + noise * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::<f64>::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.betas(), &[0.1]);
        assert_eq!(s.alpha_bars(), &[0.9]);
    }

    #[test]
    fn explicit_halves() {
        let s = NoiseSchedule::<f64>::from_betas(vec![0.5, 0.5]).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::<f64>::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[999] - 0.02).abs() < 1e-17);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn q_sample_cases() {
        let s = NoiseSchedule::<f64>::from_betas(vec![0.75]).unwrap();
        let eps = [1.0, -2.0];
        let x = q_sample(&[0.0, 0.0], 1, &eps, &s).unwrap();
        assert_eq!(x, vec![0.75f64.sqrt(), -2.0 * 0.75f64.sqrt()]);
        assert!(matches!(q_sample(&[0.0], 1, &eps, &s), Err(DiffusionError::ShapeMismatch { .. })));
        assert!(matches!(q_sample(&[0.0, 0.0], 2, &eps, &s), Err(DiffusionError::StepOutOfRange { .. })));
        // Vanishing beta leaves the signal untouched.
        let tiny = NoiseSchedule::<f64>::from_betas(vec![1e-300]).unwrap();
        assert_eq!(q_sample(&[3.0], 1, &[7.0], &tiny).unwrap(), vec![3.0]);
    }
}
