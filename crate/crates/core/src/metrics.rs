//! Distribution metrics over precomputed feature vectors: FID, KID,
//! CLIP-FID, CLIP score and unbiased kernel MMD.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sqrt_psd, symmetric_eigen, SquareMatrix};
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &[u8; 7] = b"CCFEAT\0";

/// Default CLIP score weight.
pub const CLIP_SCORE_WEIGHT: f64 = 2.5;

const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not positive semi-definite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("paired sets have different sizes: {0} vs {1}")]
    PairCountMismatch(usize, usize),
    #[error("row {0} is a zero vector")]
    ZeroVector(usize),
    #[error("feature set has {got} values, expected {expected}")]
    BadShape { expected: usize, got: usize },
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
    #[error("feature file is malformed: {0}")]
    BadFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// `n` samples of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    n: usize,
    d: usize,
    rows: Vec<T>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(n: usize, d: usize, rows: Vec<T>) -> Result<Self, MetricError> {
        if rows.len() != n * d {
            return Err(MetricError::BadShape { expected: n * d, got: rows.len() });
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
        Ok(FeatureSet { n, d, rows })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, MetricError> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(MetricError::DimensionMismatch(d, bad.len()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.rows.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.rows
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut rows = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            rows.extend_from_slice(self.row(i));
        }
        FeatureSet { n: indices.len(), d: self.d, rows }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSet<U> {
        FeatureSet { n: self.n, d: self.d, rows: self.rows.iter().map(|v| U::of(v.to_f64_lossy())).collect() }
    }
}

/// Mean and sample covariance (divisor `n - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats<T> {
    pub mu: Vec<T>,
    pub sigma: SquareMatrix<T>,
}

/// Welford's single-pass mean/covariance, symmetrised at the end.
pub fn gaussian_stats<T: Scalar>(fs: &FeatureSet<T>) -> Result<GaussianStats<T>, MetricError> {
    if fs.n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: fs.n });
    }
    let d = fs.d;
    let mut mean = vec![T::zero(); d];
    let mut comoment = SquareMatrix::zeros(d);
    let mut delta = vec![T::zero(); d];
    for (k, row) in fs.rows().enumerate() {
        let count = T::of((k + 1) as f64);
        for j in 0..d {
            delta[j] = row[j] - mean[j];
            mean[j] = mean[j] + delta[j] / count;
        }
        for i in 0..d {
            let after = row[i] - mean[i];
            for j in 0..d {
                let v = comoment.get(i, j) + after * delta[j];
                comoment.set(i, j, v);
            }
        }
    }
    let denom = T::of((fs.n - 1) as f64);
    for v in &mut comoment.data {
        *v = *v / denom;
    }
    Ok(GaussianStats { mu: mean, sigma: comoment.symmetrize() })
}

fn check_psd<T: Scalar>(sigma: &SquareMatrix<T>) -> Result<(), MetricError> {
    let eig = symmetric_eigen(sigma);
    let scale = eig.values.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let tol = T::of(PSD_TOLERANCE).max(T::epsilon() * T::of(64.0)) * scale;
    let min = eig.min_value();
    if min < -tol {
        return Err(MetricError::NotPsd(min.to_f64_lossy()));
    }
    Ok(())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½)`, clamped at zero.
///
/// The cross term uses `Tr((Σa^½ Σb Σa^½)^½)`, which has the same
/// eigenvalues as `(Σa Σb)^½` but keeps every decomposition symmetric.
pub fn frechet_distance<T: Scalar>(a: &GaussianStats<T>, b: &GaussianStats<T>) -> Result<T, MetricError> {
    if a.mu.len() != b.mu.len() || a.sigma.n != b.sigma.n || a.sigma.n != a.mu.len() {
        return Err(MetricError::DimensionMismatch(a.mu.len(), b.mu.len()));
    }
    if a == b {
        return Ok(T::zero());
    }
    check_psd(&a.sigma)?;
    check_psd(&b.sigma)?;
    let mean_term = a.mu.iter().zip(&b.mu).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    let root_a = sqrt_psd(&a.sigma);
    let inner = root_a.matmul(&b.sigma).matmul(&root_a).symmetrize();
    let cross = symmetric_eigen(&inner).values.into_iter().fold(T::zero(), |acc, l| acc + l.max(T::zero()).sqrt());
    let value = mean_term + a.sigma.trace() + b.sigma.trace() - T::of(2.0) * cross;
    Ok(value.max(T::zero()))
}

/// Kernel for MMD estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    /// `(uᵀv / d + coef0)^degree`; KID uses degree 3, coef0 1.
    Polynomial { degree: i32, coef0: f64 },
    /// `exp(−‖u − v‖² / (2 bandwidth²))`.
    Rbf { bandwidth: f64 },
}

impl Kernel {
    pub const KID: Kernel = Kernel::Polynomial { degree: 3, coef0: 1.0 };

    pub fn eval<T: Scalar>(&self, u: &[T], v: &[T]) -> T {
        match *self {
            Kernel::Polynomial { degree, coef0 } => {
                let dot = u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                (dot / T::of(u.len() as f64) + T::of(coef0)).powi(degree)
            }
            Kernel::Rbf { bandwidth } => {
                let sq = u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                (-sq / T::of(2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

/// Unbiased MMD² estimate. May be slightly negative.
pub fn mmd_unbiased<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>, kernel: &Kernel) -> Result<T, MetricError> {
    if x.n < 2 || y.n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: x.n.min(y.n) });
    }
    if x.d != y.d {
        return Err(MetricError::DimensionMismatch(x.d, y.d));
    }
    let within = |s: &FeatureSet<T>| {
        let mut acc = T::zero();
        for i in 0..s.n {
            for j in (i + 1)..s.n {
                acc = acc + kernel.eval(s.row(i), s.row(j));
            }
        }
        // Each unordered pair counted once; the ordered sum is twice this.
        T::of(2.0) * acc / T::of((s.n * (s.n - 1)) as f64)
    };
    let mut cross = T::zero();
    for i in 0..x.n {
        for j in 0..y.n {
            cross = cross + kernel.eval(x.row(i), y.row(j));
        }
    }
    let cross = cross / T::of((x.n * y.n) as f64);
    Ok(within(x) + within(y) - T::of(2.0) * cross)
}

/// KID: unbiased MMD² with the cubic polynomial kernel.
pub fn kid<T: Scalar>(x: &FeatureSet<T>, y: &FeatureSet<T>) -> Result<T, MetricError> {
    mmd_unbiased(x, y, &Kernel::KID)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidBlocks {
    pub mean: f64,
    pub std: f64,
    pub blocks: usize,
    pub block_size: usize,
}

/// KID averaged over `blocks` random subsets of `block_size` rows drawn
/// without replacement from each set.
pub fn kid_blocks<T: Scalar>(
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    blocks: usize,
    block_size: usize,
    seed: u64,
) -> Result<KidBlocks, MetricError> {
    let size = block_size.min(x.n).min(y.n);
    if size < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(blocks);
    for _ in 0..blocks.max(1) {
        let xi = sample(&mut rng, x.n, size).into_vec();
        let yi = sample(&mut rng, y.n, size).into_vec();
        values.push(kid(&x.select(&xi), &y.select(&yi))?.to_f64_lossy());
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    Ok(KidBlocks { mean, std: var.sqrt(), blocks: values.len(), block_size: size })
}

/// Mean over pairs of `w · max(0, cos(img_i, txt_i))`.
pub fn clip_score<T: Scalar>(img: &FeatureSet<T>, txt: &FeatureSet<T>, w: T) -> Result<T, MetricError> {
    if img.n != txt.n {
        return Err(MetricError::PairCountMismatch(img.n, txt.n));
    }
    if img.d != txt.d {
        return Err(MetricError::DimensionMismatch(img.d, txt.d));
    }
    if img.n == 0 {
        return Err(MetricError::TooFewSamples { needed: 1, got: 0 });
    }
    let norm = |v: &[T]| v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let mut acc = T::zero();
    for i in 0..img.n {
        let (a, b) = (img.row(i), txt.row(i));
        let (na, nb) = (norm(a), norm(b));
        if na == T::zero() || nb == T::zero() {
            return Err(MetricError::ZeroVector(i));
        }
        let cos = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y) / (na * nb);
        acc = acc + w * cos.max(T::zero());
    }
    Ok(acc / T::of(img.n as f64))
}

/// Frechet distance between Gaussian fits of CLIP-space features.
pub fn clip_fid<T: Scalar>(a: &FeatureSet<T>, b: &FeatureSet<T>) -> Result<T, MetricError> {
    frechet_distance(&gaussian_stats(a)?, &gaussian_stats(b)?)
}

/// Frechet distance between Gaussian fits of two feature sets.
pub fn fid<T: Scalar>(a: &FeatureSet<T>, b: &FeatureSet<T>) -> Result<T, MetricError> {
    frechet_distance(&gaussian_stats(a)?, &gaussian_stats(b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub params: serde_json::Value,
}

/// Encodes a feature file: magic, `u32 n`, `u32 d`, then `n·d` f32 values,
/// all little-endian.
pub fn write_features<W: Write, T: Scalar>(mut w: W, fs: &FeatureSet<T>) -> Result<(), MetricError> {
    let n = u32::try_from(fs.n).map_err(|_| MetricError::BadFile("n exceeds u32".into()))?;
    let d = u32::try_from(fs.d).map_err(|_| MetricError::BadFile("d exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(15 + fs.rows.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for v in &fs.rows {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<FeatureSet<f32>, MetricError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 15 || &bytes[..7] != FEATURE_MAGIC {
        return Err(MetricError::BadFile("missing CCFEAT header".into()));
    }
    let n = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let expected =
        n.checked_mul(d).and_then(|v| v.checked_mul(4)).ok_or_else(|| MetricError::BadFile("n*d overflows".into()))?;
    let body = &bytes[15..];
    if body.len() != expected {
        return Err(MetricError::BadFile(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let rows = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    FeatureSet::new(n, d, rows)
}

pub fn load_features(path: &Path) -> Result<FeatureSet<f32>, MetricError> {
    read_features(std::fs::File::open(path)?)
}

pub fn save_features<T: Scalar>(path: &Path, fs: &FeatureSet<T>) -> Result<(), MetricError> {
    write_features(std::io::BufWriter::new(std::fs::File::create(path)?), fs)
}
