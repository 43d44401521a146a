//! Pairwise human-preference statistics against a reference model.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

// Relative slack when comparing point probabilities, so that outcomes
// equally likely as the observed one are not lost to rounding.
const EQUAL_PROB_SLACK: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum PrefError {
    #[error("tally has no comparisons")]
    EmptyTally,
    #[error("tally has more wins ({wins}) than comparisons ({total})")]
    InvalidTally { wins: u64, total: u64 },
    #[error("rating row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTally {
    pub wins: u64,
    pub total: u64,
}

impl PreferenceTally {
    pub fn new(wins: u64, total: u64) -> Result<Self, PrefError> {
        let t = PreferenceTally { wins, total };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), PrefError> {
        if self.total == 0 {
            return Err(PrefError::EmptyTally);
        }
        if self.wins > self.total {
            return Err(PrefError::InvalidTally { wins: self.wins, total: self.total });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRate {
    pub rate: f64,
    pub wilson_95: Interval,
}

pub fn wilson_interval(wins: u64, total: u64, z: f64) -> Interval {
    let n = total as f64;
    let p = wins as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Interval { lower: (center - half).max(0.0).min(p), upper: (center + half).min(1.0).max(p) }
}

pub fn preference_rate(t: &PreferenceTally) -> Result<PreferenceRate, PrefError> {
    t.check()?;
    Ok(PreferenceRate { rate: t.wins as f64 / t.total as f64, wilson_95: wilson_interval(t.wins, t.total, Z_95) })
}

/// `ln(k!)` for `k = 0..=n`.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Exact two-sided binomial test of `wins` out of `total` against p = 0.5.
///
/// Sums the probabilities of every outcome no more likely than the
/// observed one.
pub fn parity_test(t: &PreferenceTally) -> Result<f64, PrefError> {
    t.check()?;
    let n = t.total;
    let lf = ln_factorials(n);
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    let ln_p = |k: u64| lf[n as usize] - lf[k as usize] - lf[(n - k) as usize] - ln_half_n;
    let observed = ln_p(t.wins);
    let cutoff = observed + EQUAL_PROB_SLACK.ln_1p();
    let p: f64 = (0..=n).map(ln_p).filter(|&lp| lp <= cutoff).map(f64::exp).sum();
    Ok(p.min(1.0))
}

/// Complementary error function, Chebyshev fit with fractional error
/// below 1.2e-7.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Two-sided normal-approximation test with continuity correction.
pub fn normal_parity_test(t: &PreferenceTally) -> Result<f64, PrefError> {
    t.check()?;
    let n = t.total as f64;
    let diff = ((t.wins as f64 - n / 2.0).abs() - 0.5).max(0.0);
    let z = diff / (n / 4.0).sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Ties and skips are removed before tallying.
    #[default]
    Drop,
    /// Each pair of ties counts as one win and one loss; an odd final tie
    /// is dropped so the tally stays integral.
    HalfWin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRow {
    pub prompt_id: String,
    pub left_model: String,
    pub right_model: String,
    /// `left`, `right`, `tie`, `skip`, or the name of the chosen model.
    pub choice: String,
}

pub fn read_ratings<R: Read>(reader: R) -> Result<Vec<RatingRow>, PrefError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    Ok(rdr.deserialize().collect::<Result<Vec<RatingRow>, _>>()?)
}

enum Verdict {
    Left,
    Right,
    Tie,
}

fn verdict(row: &RatingRow, index: usize) -> Result<Verdict, PrefError> {
    let c = row.choice.to_ascii_lowercase();
    Ok(match c.as_str() {
        "left" => Verdict::Left,
        "right" => Verdict::Right,
        "tie" | "skip" | "" => Verdict::Tie,
        _ if row.choice == row.left_model => Verdict::Left,
        _ if row.choice == row.right_model => Verdict::Right,
        _ => return Err(PrefError::BadRow { row: index + 1, reason: format!("unrecognised choice `{}`", row.choice) }),
    })
}

/// Tallies every candidate model's comparisons against `reference`.
/// Rows not involving the reference are ignored.
pub fn tally_ratings(
    rows: &[RatingRow],
    reference: &str,
    ties: TiePolicy,
) -> Result<BTreeMap<String, PreferenceTally>, PrefError> {
    let mut acc: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let (candidate, candidate_is_left) = if row.right_model == reference && row.left_model != reference {
            (&row.left_model, true)
        } else if row.left_model == reference && row.right_model != reference {
            (&row.right_model, false)
        } else {
            continue;
        };
        let entry = acc.entry(candidate.clone()).or_default();
        match (verdict(row, i)?, candidate_is_left) {
            (Verdict::Tie, _) => entry.2 += 1,
            (Verdict::Left, true) | (Verdict::Right, false) => {
                entry.0 += 1;
                entry.1 += 1;
            }
            _ => entry.1 += 1,
        }
    }
    Ok(acc
        .into_iter()
        .filter_map(|(model, (wins, decided, tied))| {
            let (wins, total) = match ties {
                TiePolicy::Drop => (wins, decided),
                TiePolicy::HalfWin => (wins + tied / 2, decided + tied - tied % 2),
            };
            (total > 0).then_some((model, PreferenceTally { wins, total }))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub reference: String,
    pub wins: u64,
    pub total: u64,
    pub rate: f64,
    pub wilson_95: Interval,
    pub p_value: f64,
}

pub fn summarize(model: &str, reference: &str, t: &PreferenceTally) -> Result<ModelSummary, PrefError> {
    let rate = preference_rate(t)?;
    Ok(ModelSummary {
        model: model.to_string(),
        reference: reference.to_string(),
        wins: t.wins,
        total: t.total,
        rate: rate.rate,
        wilson_95: rate.wilson_95,
        p_value: parity_test(t)?,
    })
}
