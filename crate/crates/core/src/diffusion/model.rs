use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fnv::fnv1a64;
use crate::scalar::Scalar;
use crate::telephoning::tokenize;

use super::DiffusionError;

/// Layer sizes of the perceptron denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserShape {
    pub latent_dim: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamGroup {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

impl DenoiserShape {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.time_dim + self.cond_dim
    }

    /// Weights are stored row-major as `[out, in]`.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let (i, h, d) = (self.input_dim(), self.hidden, self.latent_dim);
        let dims = [("w1", h, i), ("b1", h, 1), ("w2", h, h), ("b2", h, 1), ("w3", d, h), ("b3", d, 1)];
        let mut offset = 0;
        dims.iter()
            .map(|&(name, rows, cols)| {
                let g = ParamGroup { name, rows, cols, offset };
                offset += rows * cols;
                g
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|g| g.rows * g.cols).sum()
    }
}

/// Sinusoidal embedding of a timestep: `sin` terms then `cos` terms over
/// geometrically spaced frequencies. An odd trailing slot is zero.
pub fn time_embedding<T: Scalar>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let angle = t as f64 * freq;
        out[i] = T::of(angle.sin());
        out[half + i] = T::of(angle.cos());
    }
    out
}

/// Hashed bag-of-words caption vector, L2-normalised (zero for captions
/// without tokens).
pub fn caption_embedding<T: Scalar>(caption: &str, dim: usize) -> Vec<T> {
    let mut v = vec![0f64; dim];
    if dim == 0 {
        return Vec::new();
    }
    for token in tokenize(caption) {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| T::of(if norm > 0.0 { x / norm } else { 0.0 })).collect()
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Trace<T> {
    pub input: Vec<T>,
    pub z1: Vec<T>,
    pub a1: Vec<T>,
    pub z2: Vec<T>,
    pub a2: Vec<T>,
    pub out: Vec<T>,
}

/// Noise predictor `ε̂(x_t, t, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T> {
    shape: DenoiserShape,
    layout: Vec<Range<usize>>,
    params: Vec<T>,
}

fn layout(shape: &DenoiserShape) -> Vec<Range<usize>> {
    shape.groups().iter().map(ParamGroup::range).collect()
}

fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| w[r * cols..(r + 1) * cols].iter().zip(x).fold(bias, |acc, (&wi, &xi)| acc + wi * xi))
        .collect()
}

impl<T: Scalar> Denoiser<T> {
    pub fn zeros(shape: DenoiserShape) -> Self {
        Denoiser { shape, layout: layout(&shape), params: vec![T::zero(); shape.param_count()] }
    }

    /// Gaussian init scaled by `1/√fan_in`; the output layer starts at a
    /// tenth of that so early predictions are near zero.
    pub fn init(shape: DenoiserShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); shape.param_count()];
        for g in shape.groups() {
            if g.cols == 1 {
                continue;
            }
            let mut scale = 1.0 / (g.cols as f64).sqrt();
            if g.name == "w3" {
                scale *= 0.1;
            }
            for p in &mut params[g.range()] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = T::of(z * scale);
            }
        }
        Denoiser { shape, layout: layout(&shape), params }
    }

    pub fn from_params(shape: DenoiserShape, params: Vec<T>) -> Result<Self, DiffusionError> {
        if params.len() != shape.param_count() {
            return Err(DiffusionError::ShapeMismatch { expected: shape.param_count(), got: params.len() });
        }
        Ok(Denoiser { shape, layout: layout(&shape), params })
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn group(&self, idx: usize) -> &[T] {
        &self.params[self.layout[idx].clone()]
    }

    pub(crate) fn check_inputs(&self, x_t: &[T], cond: &[T]) -> Result<(), DiffusionError> {
        if x_t.len() != self.shape.latent_dim {
            return Err(DiffusionError::ShapeMismatch { expected: self.shape.latent_dim, got: x_t.len() });
        }
        if cond.len() != self.shape.cond_dim {
            return Err(DiffusionError::ShapeMismatch { expected: self.shape.cond_dim, got: cond.len() });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x_t: &[T], t: usize, cond: &[T]) -> Trace<T> {
        let mut input = Vec::with_capacity(self.shape.input_dim());
        input.extend_from_slice(x_t);
        input.extend(time_embedding::<T>(t, self.shape.time_dim));
        input.extend_from_slice(cond);
        let z1 = affine(self.group(0), self.group(1), &input);
        let a1: Vec<T> = z1.iter().map(|&z| silu(z)).collect();
        let z2 = affine(self.group(2), self.group(3), &a1);
        let a2: Vec<T> = z2.iter().map(|&z| silu(z)).collect();
        let out = affine(self.group(4), self.group(5), &a2);
        Trace { input, z1, a1, z2, a2, out }
    }

    pub fn predict(&self, x_t: &[T], t: usize, cond: &[T]) -> Result<Vec<T>, DiffusionError> {
        self.check_inputs(x_t, cond)?;
        Ok(self.forward(x_t, t, cond).out)
    }

    /// Adds `∂L/∂θ` to `grad` given `∂L/∂out` for one forward trace.
    pub(crate) fn backward(&self, trace: &Trace<T>, d_out: &[T], grad: &mut [T]) {
        let groups = &self.layout;
        let (h, d, i) = (self.shape.hidden, self.shape.latent_dim, self.shape.input_dim());

        // Output layer.
        let w3 = self.group(4);
        let (gw3, gb3) = (groups[4].start, groups[5].start);
        let mut d_a2 = vec![T::zero(); h];
        for r in 0..d {
            let g = d_out[r];
            grad[gb3 + r] = grad[gb3 + r] + g;
            for c in 0..h {
                grad[gw3 + r * h + c] = grad[gw3 + r * h + c] + g * trace.a2[c];
                d_a2[c] = d_a2[c] + w3[r * h + c] * g;
            }
        }

        // Second hidden layer.
        let w2 = self.group(2);
        let (gw2, gb2) = (groups[2].start, groups[3].start);
        let mut d_a1 = vec![T::zero(); h];
        for r in 0..h {
            let g = d_a2[r] * silu_grad(trace.z2[r]);
            grad[gb2 + r] = grad[gb2 + r] + g;
            for c in 0..h {
                grad[gw2 + r * h + c] = grad[gw2 + r * h + c] + g * trace.a1[c];
                d_a1[c] = d_a1[c] + w2[r * h + c] * g;
            }
        }

        // First hidden layer.
        let (gw1, gb1) = (groups[0].start, groups[1].start);
        for r in 0..h {
            let g = d_a1[r] * silu_grad(trace.z1[r]);
            grad[gb1 + r] = grad[gb1 + r] + g;
            for c in 0..i {
                grad[gw1 + r * i + c] = grad[gw1 + r * i + c] + g * trace.input[c];
            }
        }
    }
}
