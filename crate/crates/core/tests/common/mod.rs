//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use canvas_forge::diffusion::{batch_gradient, Denoiser, DenoiserShape, NoiseSchedule, NoisedExample};
use canvas_forge::metrics::FeatureSet;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| normal(rng)).collect()).collect()
}

pub fn feature_set(rows: &[Vec<f64>]) -> FeatureSet<f64> {
    FeatureSet::from_rows(rows).unwrap()
}

// ---- diffusion ----

pub const MIXTURE_CENTRES: [[f64; 2]; 2] = [[-2.0, 0.0], [2.0, 0.0]];
pub const MIXTURE_WEIGHT_LEFT: f64 = 0.3;
pub const MIXTURE_STD: f64 = 0.4;

/// Two-component mixture laid out as `(1, 1, 2)` latents.
pub fn mixture_latents(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let c = if r.random::<f64>() < MIXTURE_WEIGHT_LEFT { 0 } else { 1 };
            MIXTURE_CENTRES[c].iter().map(|&m| m + MIXTURE_STD * normal(&mut r)).collect()
        })
        .collect()
}

/// Share of points whose nearest centre is the left one.
pub fn left_occupancy(points: &[Vec<f64>]) -> f64 {
    let dist = |p: &[f64], c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
    let left = points.iter().filter(|p| dist(p, &MIXTURE_CENTRES[0]) < dist(p, &MIXTURE_CENTRES[1])).count();
    left as f64 / points.len() as f64
}

pub fn small_shape() -> DenoiserShape {
    DenoiserShape { latent_dim: 3, time_dim: 4, cond_dim: 2, hidden: 6 }
}

pub fn random_batch(shape: &DenoiserShape, n: usize, steps: usize, seed: u64) -> Vec<NoisedExample<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| NoisedExample {
            x0: (0..shape.latent_dim).map(|_| normal(&mut r)).collect(),
            cond: (0..shape.cond_dim).map(|_| normal(&mut r)).collect(),
            t: r.random_range(1..=steps),
            eps: (0..shape.latent_dim).map(|_| normal(&mut r)).collect(),
        })
        .collect()
}

/// Worst relative error between the analytic gradient and central
/// differences over the given coordinates.
pub fn finite_difference_error(
    model: &Denoiser<f64>,
    batch: &[NoisedExample<f64>],
    schedule: &NoiseSchedule<f64>,
    coords: &[usize],
    h: f64,
) -> f64 {
    let (_, grad) = batch_gradient(model, batch, batch.len(), schedule).unwrap();
    let loss_at = |i: usize, delta: f64| {
        let mut p = model.params().to_vec();
        p[i] += delta;
        let m = Denoiser::from_params(model.shape(), p).unwrap();
        batch_gradient(&m, batch, batch.len(), schedule).unwrap().0
    };
    coords
        .iter()
        .map(|&i| {
            let fd = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h);
            (grad[i] - fd).abs() / (grad[i].abs() + fd.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}

// ---- metrics ----

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Random SPD matrix `A Aᵀ + εI`.
pub fn random_spd(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(r));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance via nalgebra's eigensolver, with the cross term taken
/// as `Tr √(√Σb Σa √Σb)` (the other ordering from the library).
pub fn frechet_oracle(mu_a: &[f64], sa: &DMatrix<f64>, mu_b: &[f64], sb: &DMatrix<f64>) -> f64 {
    let diff: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b).powi(2)).sum();
    let rb = psd_sqrt(sb);
    let cross = psd_sqrt(&(&rb * sa * &rb)).trace();
    diff + sa.trace() + sb.trace() - 2.0 * cross
}

/// Sample mean and covariance via the two-pass textbook formulas.
pub fn two_pass_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|i| {
            (0..d).map(|j| rows.iter().map(|r| (r[i] - mu[i]) * (r[j] - mu[j])).sum::<f64>() / (n - 1.0)).collect()
        })
        .collect();
    (mu, cov)
}

/// Brute-force unbiased MMD² with the KID kernel.
pub fn kid_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let d = x[0].len() as f64;
    let k = |u: &[f64], v: &[f64]| {
        let mut dot = 0.0;
        for i in 0..u.len() {
            dot += u[i] * v[i];
        }
        (dot / d + 1.0).powi(3)
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                kxx += k(&x[i], &x[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                kyy += k(&y[i], &y[j]);
            }
        }
    }
    let mut kxy = 0.0;
    for xi in x {
        for yj in y {
            kxy += k(xi, yj);
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

/// Haar-random orthogonal matrix from a QR decomposition.
pub fn random_rotation(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(r));
    a.qr().q()
}

pub fn rotate(rows: &[Vec<f64>], q: &DMatrix<f64>) -> Vec<Vec<f64>> {
    rows.iter().map(|row| (0..q.nrows()).map(|i| (0..row.len()).map(|j| q[(i, j)] * row[j]).sum()).collect()).collect()
}

// ---- human eval ----

/// Exact two-sided binomial p-value at p = 1/2 from exact big-integer
/// binomial coefficients, for small `n` only.
pub fn binomial_p_oracle(wins: u64, total: u64) -> f64 {
    let choose = |n: u64, k: u64| -> f64 {
        let mut c = 1u128;
        for i in 0..k as u128 {
            c = c * (n as u128 - i) / (i + 1);
        }
        c as f64
    };
    let observed = choose(total, wins);
    let sum: f64 = (0..=total).map(|k| choose(total, k)).filter(|&c| c <= observed * (1.0 + 1e-12)).sum();
    (sum / 2f64.powi(total as i32)).min(1.0)
}

// ---- published tables ----

/// YFCC100M Creative-Commons rows: license string, image count and the
/// percentage with usable alt text.
pub const LICENSE_TABLE: [(&str, u64, f64); 6] = [
    ("CC-BY-NC-ND-2.0", 25_790_117, 33.52),
    ("CC-BY-ND-2.0", 4_827_970, 30.23),
    ("CC-BY-NC-2.0", 12_468_229, 31.39),
    ("CC-BY-NC-SA-2.0", 28_314_685, 31.57),
    ("CC-BY-SA 2.0", 9_270_079, 34.05),
    ("CC-BY 2.0", 16_962_338, 28.96),
];

pub fn license_table_records() -> Vec<canvas_forge::catalog::CatalogRecord> {
    LICENSE_TABLE
        .iter()
        .enumerate()
        .map(|(i, (lic, n, _))| {
            canvas_forge::catalog::CatalogRecord::new(format!("row-{i}"), *lic).with_multiplicity(*n)
        })
        .collect()
}

pub fn license_table_rates() -> Vec<canvas_forge::catalog::LicenseRate> {
    LICENSE_TABLE
        .iter()
        .map(|(lic, n, pct)| canvas_forge::catalog::LicenseRate { license: lic.to_string(), count: *n, pct: *pct })
        .collect()
}

/// Training cost rows: GPUs, 256 / 512 / 512+EMA throughput, days, dollars.
pub fn cost_table() -> Vec<canvas_forge::planner::CostTableRow> {
    [
        (8, 1100.0, 290.0, 290.0, 101.04, 38_800.0),
        (16, 2180.0, 585.0, 580.0, 50.29, 38_630.0),
        (32, 4080.0, 1195.0, 1160.0, 25.01, 38_420.0),
        (64, 8530.0, 2340.0, 2220.0, 12.63, 38_800.0),
        (128, 11600.0, 4590.0, 3927.0, 6.79, 41_710.0),
    ]
    .into_iter()
    .map(|(gpus, throughput_256, throughput_512, throughput_512_ema, days, cost)| canvas_forge::planner::CostTableRow {
        gpus,
        throughput_256,
        throughput_512,
        throughput_512_ema,
        days,
        cost,
    })
    .collect()
}
