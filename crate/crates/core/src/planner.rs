//! Training cost, speedup and dataset-capacity arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const DEFAULT_PRICE_PER_GPU_HOUR: f64 = 2.0;
/// Fraction of 512px images processed with EMA enabled.
pub const DEFAULT_EMA_FRACTION: f64 = 0.035;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("stage `{0}` has non-positive throughput")]
    ZeroThroughput(String),
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("stage-budget system is singular")]
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub name: String,
    pub images_to_process: f64,
    /// Images per second across the whole cluster.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPlan {
    pub gpu_count: u32,
    pub price_per_gpu_hour: f64,
    pub stages: Vec<StagePlan>,
    pub days: f64,
    pub cost: f64,
}

pub fn plan_cost(stages: &[StagePlan], gpu_count: u32, price_per_gpu_hour: f64) -> Result<CostPlan, PlanError> {
    if gpu_count == 0 {
        return Err(PlanError::Invalid { field: "gpu_count", reason: "must be positive".into() });
    }
    if !(price_per_gpu_hour >= 0.0 && price_per_gpu_hour.is_finite()) {
        return Err(PlanError::Invalid { field: "price_per_gpu_hour", reason: format!("{price_per_gpu_hour}") });
    }
    let mut seconds = 0.0;
    for stage in stages {
        if stage.throughput.is_nan() || stage.throughput <= 0.0 {
            return Err(PlanError::ZeroThroughput(stage.name.clone()));
        }
        if stage.images_to_process.is_nan() || stage.images_to_process < 0.0 {
            return Err(PlanError::Invalid {
                field: "images_to_process",
                reason: format!("stage `{}` has {}", stage.name, stage.images_to_process),
            });
        }
        seconds += stage.images_to_process / stage.throughput;
    }
    let days = seconds / SECONDS_PER_DAY;
    Ok(CostPlan {
        gpu_count,
        price_per_gpu_hour,
        stages: stages.to_vec(),
        days,
        cost: days * 24.0 * f64::from(gpu_count) * price_per_gpu_hour,
    })
}

impl CostPlan {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>14} | {:>24} | {:>14}\n",
            "Number of GPUs",
            self.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" / "),
            "Days to Train"
        );
        out.push_str(&format!(
            "{:>14} | {:>24} | {:>14.2}\n",
            self.gpu_count,
            self.stages.iter().map(|s| format!("{}", s.throughput)).collect::<Vec<_>>().join(" / "),
            self.days
        ));
        out.push_str(&format!("cost: ${:.2} at ${:.2}/GPU-hr\n", self.cost, self.price_per_gpu_hour));
        out
    }
}

/// One row of a published cost table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTableRow {
    pub gpus: u32,
    pub throughput_256: f64,
    pub throughput_512: f64,
    pub throughput_512_ema: f64,
    pub days: f64,
    pub cost: f64,
}

impl CostTableRow {
    /// Price per GPU-hour implied by the row's cost and duration.
    pub fn implied_price(&self) -> f64 {
        self.cost / (self.days * 24.0 * f64::from(self.gpus))
    }
}

/// Images processed at each resolution over a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBudgets {
    pub images_256: f64,
    pub images_512: f64,
    /// Share of the 512px images processed with EMA enabled.
    pub ema_fraction: f64,
}

impl StageBudgets {
    pub fn stages(&self, row: &CostTableRow) -> Vec<StagePlan> {
        vec![
            StagePlan { name: "256".into(), images_to_process: self.images_256, throughput: row.throughput_256 },
            StagePlan {
                name: "512".into(),
                images_to_process: self.images_512 * (1.0 - self.ema_fraction),
                throughput: row.throughput_512,
            },
            StagePlan {
                name: "512+ema".into(),
                images_to_process: self.images_512 * self.ema_fraction,
                throughput: row.throughput_512_ema,
            },
        ]
    }

    pub fn predict_days(&self, row: &CostTableRow) -> Result<f64, PlanError> {
        Ok(plan_cost(&self.stages(row), row.gpus, DEFAULT_PRICE_PER_GPU_HOUR)?.days)
    }
}

fn seconds_per_512_image(row: &CostTableRow, ema_fraction: f64) -> f64 {
    (1.0 - ema_fraction) / row.throughput_512 + ema_fraction / row.throughput_512_ema
}

/// Recovers the 256px and 512px image budgets from two table rows by
/// solving the 2x2 system `days·86400 = N256/t256 + N512·s512`.
pub fn fit_stage_budgets(a: &CostTableRow, b: &CostTableRow, ema_fraction: f64) -> Result<StageBudgets, PlanError> {
    let (a11, a12) = (1.0 / a.throughput_256, seconds_per_512_image(a, ema_fraction));
    let (a21, a22) = (1.0 / b.throughput_256, seconds_per_512_image(b, ema_fraction));
    let (y1, y2) = (a.days * SECONDS_PER_DAY, b.days * SECONDS_PER_DAY);
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-18 * (a11 * a22).abs().max(1e-300) {
        return Err(PlanError::Singular);
    }
    Ok(StageBudgets { images_256: (y1 * a22 - a12 * y2) / det, images_512: (a11 * y2 - a21 * y1) / det, ema_fraction })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityQuery {
    pub n_params: u64,
    pub c: u64,
    pub h: u64,
    pub w: u64,
    pub dataset_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capacity {
    pub critical_size: u64,
    pub memorization_possible: bool,
}

/// Largest dataset a model could memorise outright, assuming each
/// parameter stores one latent value: `⌊N_p / (c·H·W)⌋`.
pub fn critical_size(q: &CapacityQuery) -> Result<Capacity, PlanError> {
    let per_image =
        q.c.checked_mul(q.h)
            .and_then(|v| v.checked_mul(q.w))
            .filter(|&v| v > 0)
            .ok_or(PlanError::Invalid { field: "c*h*w", reason: "must be positive and fit in u64".into() })?;
    let n_c = q.n_params / per_image;
    Ok(Capacity { critical_size: n_c, memorization_possible: q.dataset_size <= n_c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupStep {
    pub name: String,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedupLedger {
    pub steps: Vec<SpeedupStep>,
}

impl SpeedupLedger {
    pub fn push(&mut self, name: impl Into<String>, multiplier: f64) -> Result<(), PlanError> {
        if !(multiplier >= 1.0 && multiplier.is_finite()) {
            return Err(PlanError::Invalid { field: "multiplier", reason: format!("{multiplier} is below 1") });
        }
        self.steps.push(SpeedupStep { name: name.into(), multiplier });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeSpeedup {
    pub total: f64,
    /// Running product after each step.
    pub curve: Vec<f64>,
}

pub fn cumulative_speedup(ledger: &SpeedupLedger) -> Result<CumulativeSpeedup, PlanError> {
    let mut total = 1.0;
    let mut curve = Vec::with_capacity(ledger.steps.len());
    for step in &ledger.steps {
        if !(step.multiplier >= 1.0 && step.multiplier.is_finite()) {
            return Err(PlanError::Invalid {
                field: "multiplier",
                reason: format!("`{}` has multiplier {}", step.name, step.multiplier),
            });
        }
        total *= step.multiplier;
        curve.push(total);
    }
    Ok(CumulativeSpeedup { total, curve })
}
