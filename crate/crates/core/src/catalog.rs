//! Creative-Commons license classification and training-pool partitioning.
//!
//! Records are routed into three pools: commercial (`C`, attribution and
//! share-alike licenses), non-commercial (`NC`, a superset of `C` that adds
//! the NC licenses) and excluded (any no-derivatives license or a string we
//! cannot recognise). Every count is weighted by [`CatalogRecord::multiplicity`]
//! so a single record can stand in for millions of identically licensed rows.

use std::collections::HashSet;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telephoning::AltTextFilter;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("no records match the {0:?} pool")]
    EmptyPool(Pool),
    #[error("invalid record on line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn default_multiplicity() -> u64 {
    1
}

/// Metadata for one source image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub id: String,
    #[serde(alias = "license")]
    pub license_raw: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub user_description: Option<String>,
    #[serde(default = "default_multiplicity")]
    pub multiplicity: u64,
}

impl CatalogRecord {
    pub fn new(id: impl Into<String>, license_raw: impl Into<String>) -> Self {
        CatalogRecord {
            id: id.into(),
            license_raw: license_raw.into(),
            width: 1,
            height: 1,
            title: None,
            user_description: None,
            multiplicity: 1,
        }
    }

    pub fn with_multiplicity(mut self, multiplicity: u64) -> Self {
        self.multiplicity = multiplicity;
        self
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_text(mut self, title: Option<&str>, description: Option<&str>) -> Self {
        self.title = title.map(str::to_owned);
        self.user_description = description.map(str::to_owned);
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err(format!("record `{}` has a zero dimension", self.id));
        }
        if self.multiplicity == 0 {
            return Err(format!("record `{}` has zero multiplicity", self.id));
        }
        Ok(())
    }
}

/// License family, ordered by permissiveness (most permissive last).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LicenseClass {
    Unknown,
    NonDerivative,
    NonCommercialDerivative,
    CommercialDerivative,
}

impl LicenseClass {
    pub fn pool(self) -> Pool {
        match self {
            LicenseClass::CommercialDerivative => Pool::Commercial,
            LicenseClass::NonCommercialDerivative => Pool::NonCommercial,
            LicenseClass::NonDerivative | LicenseClass::Unknown => Pool::Excluded,
        }
    }

    /// Whether a record of this class belongs to `pool` under the nesting
    /// rule (the NC pool contains the C pool).
    pub fn in_pool(self, pool: Pool) -> bool {
        match pool {
            Pool::Commercial => self == LicenseClass::CommercialDerivative,
            Pool::NonCommercial => {
                matches!(self, LicenseClass::CommercialDerivative | LicenseClass::NonCommercialDerivative)
            }
            Pool::Excluded => matches!(self, LicenseClass::NonDerivative | LicenseClass::Unknown),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Commercial,
    NonCommercial,
    Excluded,
}

// Words that may appear in a license string without changing its meaning.
const FILLER_TOKENS: &[&str] =
    &["CC", "CREATIVE", "COMMONS", "LICENSE", "LICENCE", "GENERIC", "UNPORTED", "INTERNATIONAL", "DEED"];

fn canonical_token(token: &str) -> Option<&'static str> {
    Some(match token {
        "BY" | "ATTRIBUTION" => "BY",
        "SA" | "SHAREALIKE" => "SA",
        "NC" | "NONCOMMERCIAL" => "NC",
        "ND" | "NODERIVS" | "NODERIVATIVES" => "ND",
        _ => return None,
    })
}

fn is_version(token: &str) -> bool {
    let token = token.strip_prefix('V').unwrap_or(token);
    !token.is_empty()
        && token.chars().all(|c| c.is_ascii_digit() || c == '.')
        && token.chars().any(|c| c.is_ascii_digit())
}

/// Uppercases and collapses `+ - _` and whitespace runs to single spaces.
pub fn normalize_license(raw: &str) -> String {
    raw.split(|c: char| c == '+' || c == '-' || c == '_' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_uppercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn classify_license(license_raw: &str) -> LicenseClass {
    let normalized = normalize_license(license_raw);
    let mut by = false;
    let mut nc = false;
    let mut nd = false;
    let mut foreign = false;
    for token in normalized.split(' ').filter(|t| !t.is_empty()) {
        if is_version(token) || FILLER_TOKENS.contains(&token) {
            continue;
        }
        match canonical_token(token) {
            Some("BY") => by = true,
            Some("NC") => nc = true,
            Some("ND") => nd = true,
            Some(_) => {}
            None => foreign = true,
        }
    }
    if nd {
        LicenseClass::NonDerivative
    } else if foreign || !by {
        LicenseClass::Unknown
    } else if nc {
        LicenseClass::NonCommercialDerivative
    } else {
        LicenseClass::CommercialDerivative
    }
}

/// Multiplicity-weighted pool counts.
///
/// `count_nc` includes the commercial records. Usable alt-text tallies are
/// kept alongside so that summaries from independent shards merge exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolTally {
    pub count_c: u64,
    pub count_nc: u64,
    pub count_excluded: u64,
    pub usable_c: u64,
    pub usable_nc: u64,
}

impl PoolTally {
    pub fn add(&mut self, class: LicenseClass, multiplicity: u64, usable_alt_text: bool) {
        let usable = if usable_alt_text { multiplicity } else { 0 };
        match class.pool() {
            Pool::Commercial => {
                self.count_c += multiplicity;
                self.count_nc += multiplicity;
                self.usable_c += usable;
                self.usable_nc += usable;
            }
            Pool::NonCommercial => {
                self.count_nc += multiplicity;
                self.usable_nc += usable;
            }
            Pool::Excluded => self.count_excluded += multiplicity,
        }
    }

    pub fn merge(&self, other: &PoolTally) -> PoolTally {
        PoolTally {
            count_c: self.count_c + other.count_c,
            count_nc: self.count_nc + other.count_nc,
            count_excluded: self.count_excluded + other.count_excluded,
            usable_c: self.usable_c + other.usable_c,
            usable_nc: self.usable_nc + other.usable_nc,
        }
    }

    pub fn total(&self) -> u64 {
        self.count_nc + self.count_excluded
    }

    pub fn summary(&self) -> PartitionSummary {
        let pct = |usable: u64, count: u64| (count > 0).then(|| 100.0 * usable as f64 / count as f64);
        PartitionSummary {
            count_c: self.count_c,
            count_nc: self.count_nc,
            count_excluded: self.count_excluded,
            alt_text_pct_c: pct(self.usable_c, self.count_c),
            alt_text_pct_nc: pct(self.usable_nc, self.count_nc),
        }
    }
}

/// Alt-text percentages are `None` when the pool is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub count_c: u64,
    pub count_nc: u64,
    pub count_excluded: u64,
    pub alt_text_pct_c: Option<f64>,
    pub alt_text_pct_nc: Option<f64>,
}

impl PartitionSummary {
    pub fn to_table(&self) -> String {
        let pct = |p: Option<f64>| p.map_or_else(|| "-".to_string(), |p| format!("{p:.2}%"));
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>14} {:>12}\n", "Pool", "# Images", "% Alt Text"));
        out.push_str(&format!("{:<12} {:>14} {:>12}\n", "C", group_thousands(self.count_c), pct(self.alt_text_pct_c)));
        out.push_str(&format!(
            "{:<12} {:>14} {:>12}\n",
            "NC",
            group_thousands(self.count_nc),
            pct(self.alt_text_pct_nc)
        ));
        out.push_str(&format!("{:<12} {:>14} {:>12}\n", "Excluded", group_thousands(self.count_excluded), "-"));
        out
    }
}

pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Streaming partition fold. Feed records with [`Partitioner::push`] and
/// route each one according to the returned pool.
pub struct Partitioner {
    seen: HashSet<String>,
    tally: PoolTally,
    filter: AltTextFilter,
}

impl Default for Partitioner {
    fn default() -> Self {
        Self::new(AltTextFilter::default())
    }
}

impl Partitioner {
    pub fn new(filter: AltTextFilter) -> Self {
        Partitioner { seen: HashSet::new(), tally: PoolTally::default(), filter }
    }

    pub fn push(&mut self, record: &CatalogRecord) -> Result<LicenseClass, CatalogError> {
        if !self.seen.insert(record.id.clone()) {
            return Err(CatalogError::DuplicateId(record.id.clone()));
        }
        let class = classify_license(&record.license_raw);
        let usable = self.filter.usable(record.title.as_deref(), record.user_description.as_deref());
        self.tally.add(class, record.multiplicity, usable);
        Ok(class)
    }

    pub fn tally(&self) -> PoolTally {
        self.tally
    }

    pub fn summary(&self) -> PartitionSummary {
        self.tally.summary()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Partition {
    pub commercial: Vec<CatalogRecord>,
    pub non_commercial: Vec<CatalogRecord>,
    pub excluded: Vec<CatalogRecord>,
}

/// Partitions `records` into the C, NC (containing C) and excluded streams.
pub fn partition<I>(records: I) -> Result<(PartitionSummary, Partition), CatalogError>
where
    I: IntoIterator<Item = CatalogRecord>,
{
    let mut partitioner = Partitioner::default();
    let mut out = Partition::default();
    for record in records {
        match partitioner.push(&record)?.pool() {
            Pool::Commercial => {
                out.non_commercial.push(record.clone());
                out.commercial.push(record);
            }
            Pool::NonCommercial => out.non_commercial.push(record),
            Pool::Excluded => out.excluded.push(record),
        }
    }
    Ok((partitioner.summary(), out))
}

/// Multiplicity-weighted percentage of `pool` records with usable alt text.
pub fn alt_text_percentage<'a, I>(records: I, pool: Pool, filter: &AltTextFilter) -> Result<f64, CatalogError>
where
    I: IntoIterator<Item = &'a CatalogRecord>,
{
    let mut total = 0u64;
    let mut usable = 0u64;
    for record in records {
        if !classify_license(&record.license_raw).in_pool(pool) {
            continue;
        }
        total += record.multiplicity;
        if filter.usable(record.title.as_deref(), record.user_description.as_deref()) {
            usable += record.multiplicity;
        }
    }
    if total == 0 {
        return Err(CatalogError::EmptyPool(pool));
    }
    Ok(100.0 * usable as f64 / total as f64)
}

/// Aggregate row: a license, how many images carry it and the percentage of
/// those with usable alt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicenseRate {
    pub license: String,
    pub count: u64,
    pub pct: f64,
}

/// Count-weighted mean of per-license alt-text percentages over `pool`.
pub fn weighted_alt_text_percentage(rows: &[LicenseRate], pool: Pool) -> Result<f64, CatalogError> {
    let mut weight = 0u64;
    let mut acc = 0.0;
    for row in rows.iter().filter(|r| classify_license(&r.license).in_pool(pool)) {
        weight += row.count;
        acc += row.pct * row.count as f64;
    }
    if weight == 0 {
        return Err(CatalogError::EmptyPool(pool));
    }
    Ok(acc / weight as f64)
}

/// Reads newline-delimited JSON records; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<CatalogRecord>, CatalogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CatalogRecord = serde_json::from_str(&line)
            .map_err(|e| CatalogError::InvalidRecord { line: i + 1, reason: e.to_string() })?;
        record.validate().map_err(|reason| CatalogError::InvalidRecord { line: i + 1, reason })?;
        out.push(record);
    }
    Ok(out)
}

/// Reads CSV with a header naming the [`CatalogRecord`] fields. Empty
/// optional cells are treated as absent.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<CatalogRecord>, CatalogError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        #[serde(alias = "license")]
        license_raw: String,
        width: u32,
        height: u32,
        #[serde(default)]
        title: Option<String>,
        #[serde(default)]
        user_description: Option<String>,
        #[serde(default)]
        multiplicity: Option<u64>,
    }
    let mut out = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let nonempty = |s: Option<String>| s.filter(|s| !s.is_empty());
        let record = CatalogRecord {
            id: row.id,
            license_raw: row.license_raw,
            width: row.width,
            height: row.height,
            title: nonempty(row.title),
            user_description: nonempty(row.user_description),
            multiplicity: row.multiplicity.unwrap_or(1),
        };
        record.validate().map_err(|reason| CatalogError::InvalidRecord { line: i + 2, reason })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, W, I>(mut writer: W, records: I) -> std::io::Result<()>
where
    W: std::io::Write,
    I: IntoIterator<Item = &'a CatalogRecord>,
{
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
