//! Synthetic captioning of uncaptioned images through an external captioner.
//!
//! The captioner is reached through [`CaptionerClient`]; [`HttpCaptioner`]
//! speaks the JSON wire protocol and [`MockCaptioner`] is a deterministic
//! in-process stand-in. [`caption_batch`] drives a bounded pool of workers,
//! retries transient failures with exponential backoff, resumes from a
//! [`CaptionCache`] and routes persistent failures to dead letters.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogRecord;
use crate::fnv::{fnv1a64, splitmix64};

/// Longest side of a preprocessed image.
pub const MAX_SIDE: u32 = 512;

/// Center-crop to a square, then downscale to at most [`MAX_SIDE`].
/// Images smaller than that are never upscaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub crop_x: u32,
    pub crop_y: u32,
    pub crop_side: u32,
    pub target_side: u32,
}

impl PreprocessPlan {
    pub fn fingerprint(&self) -> String {
        format!("crop{}@{},{}->{}", self.crop_side, self.crop_x, self.crop_y, self.target_side)
    }
}

pub fn preprocess_plan(width: u32, height: u32) -> PreprocessPlan {
    let crop_side = width.min(height);
    PreprocessPlan {
        crop_x: (width - crop_side) / 2,
        crop_y: (height - crop_side) / 2,
        crop_side,
        target_side: crop_side.min(MAX_SIDE),
    }
}

// ---------------------------------------------------------------------------
// Alt-text usability

/// Camera and uploader defaults that are never useful captions.
pub const DEFAULT_BLACKLIST: &[&str] = &["OLYMPUS DIGITAL CAMERA", "SONY DSC", "EXIF JPEG PICTURE", "."];

const MIN_ALT_TEXT_TOKENS: usize = 3;

fn normalize_pattern(text: &str) -> String {
    text.split(|c: char| c == '+' || c == '-' || c == '_' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_uppercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

fn is_url(token: &str) -> bool {
    let t = token.to_ascii_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

/// Decides whether user-supplied title/description text is a usable caption.
#[derive(Debug, Clone)]
pub struct AltTextFilter {
    patterns: HashSet<String>,
}

impl Default for AltTextFilter {
    fn default() -> Self {
        Self::from_patterns(DEFAULT_BLACKLIST.iter().copied())
    }
}

impl AltTextFilter {
    pub fn from_patterns<'a>(patterns: impl IntoIterator<Item = &'a str>) -> Self {
        AltTextFilter { patterns: patterns.into_iter().map(normalize_pattern).collect() }
    }

    /// Plain text, one pattern per line. Blank lines are ignored; a line
    /// consisting of a single `.` is kept since it is itself a pattern.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_patterns(text.lines().filter(|l| !l.trim().is_empty())))
    }

    pub fn field_usable(&self, text: &str) -> bool {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return false;
        }
        if trimmed.split_whitespace().all(is_url) {
            return false;
        }
        if self.patterns.contains(&normalize_pattern(trimmed)) {
            return false;
        }
        tokenize(trimmed).len() >= MIN_ALT_TEXT_TOKENS
    }

    pub fn usable(&self, title: Option<&str>, description: Option<&str>) -> bool {
        title.is_some_and(|t| self.field_usable(t)) || description.is_some_and(|d| self.field_usable(d))
    }
}

/// [`AltTextFilter::usable`] with the default blacklist.
pub fn usable_alt_text(title: Option<&str>, description: Option<&str>) -> bool {
    AltTextFilter::default().usable(title, description)
}

// ---------------------------------------------------------------------------
// Caption statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub n_captions: usize,
    pub total_trigrams: usize,
    pub unique_trigrams: usize,
    /// `unique_trigrams / total_trigrams`, or 0 when there are no trigrams.
    pub trigram_ratio: f64,
    pub mean_tokens: f64,
}

pub fn caption_stats<I, S>(captions: I) -> CaptionStats
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut unique: HashSet<[String; 3]> = HashSet::new();
    let mut n_captions = 0usize;
    let mut total_tokens = 0usize;
    let mut total_trigrams = 0usize;
    for caption in captions {
        let tokens = tokenize(caption.as_ref());
        n_captions += 1;
        total_tokens += tokens.len();
        for w in tokens.windows(3) {
            total_trigrams += 1;
            unique.insert([w[0].clone(), w[1].clone(), w[2].clone()]);
        }
    }
    CaptionStats {
        n_captions,
        total_trigrams,
        unique_trigrams: unique.len(),
        trigram_ratio: if total_trigrams == 0 { 0.0 } else { unique.len() as f64 / total_trigrams as f64 },
        mean_tokens: if n_captions == 0 { 0.0 } else { total_tokens as f64 / n_captions as f64 },
    }
}

// ---------------------------------------------------------------------------
// Wire protocol and clients

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub id: String,
    pub image_b64: String,
    pub max_side: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub id: String,
    pub caption: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptionError {
    /// Connection failure or HTTP 503. Retryable.
    #[error("captioner unavailable: {0}")]
    Unavailable(String),
    /// The service answered but broke the protocol. Not retried.
    #[error("malformed captioner response: {0}")]
    Malformed(String),
    #[error("image payload for `{id}` could not be loaded: {reason}")]
    ImageLoad { id: String, reason: String },
}

impl CaptionError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, CaptionError::Unavailable(_))
    }
}

pub trait CaptionerClient: Sync {
    /// Identity of the forward model; part of the cache key.
    fn captioner_id(&self) -> &str;

    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, CaptionError>;
}

/// Validates a decoded response against the request it answers.
pub fn check_response(request: &CaptionRequest, response: &CaptionResponse) -> Result<(), CaptionError> {
    if response.id != request.id {
        return Err(CaptionError::Malformed(format!(
            "response id `{}` does not match request id `{}`",
            response.id, request.id
        )));
    }
    if response.caption.trim().is_empty() {
        return Err(CaptionError::Malformed(format!("empty caption for `{}`", request.id)));
    }
    Ok(())
}

/// Client for a captioner service exposing `POST {base}/caption`.
pub struct HttpCaptioner {
    base_url: String,
    captioner_id: String,
    agent: ureq::Agent,
}

impl HttpCaptioner {
    pub fn new(base_url: impl Into<String>, captioner_id: impl Into<String>, timeout: Duration) -> Self {
        HttpCaptioner {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            captioner_id: captioner_id.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/caption", self.base_url)
    }
}

impl CaptionerClient for HttpCaptioner {
    fn captioner_id(&self) -> &str {
        &self.captioner_id
    }

    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, CaptionError> {
        let body = serde_json::to_value(request).map_err(|e| CaptionError::Malformed(e.to_string()))?;
        match self.agent.post(&self.endpoint()).send_json(body) {
            Ok(resp) if resp.status() == 200 => {
                let text = resp.into_string().map_err(|e| CaptionError::Unavailable(format!("reading body: {e}")))?;
                let parsed: CaptionResponse =
                    serde_json::from_str(&text).map_err(|e| CaptionError::Malformed(format!("{e}: {text}")))?;
                check_response(request, &parsed)?;
                Ok(parsed)
            }
            Ok(resp) => Err(CaptionError::Malformed(format!("unexpected status {}", resp.status()))),
            Err(ureq::Error::Status(503, _)) => Err(CaptionError::Unavailable("status 503".into())),
            Err(ureq::Error::Status(code, _)) => Err(CaptionError::Malformed(format!("unexpected status {code}"))),
            Err(ureq::Error::Transport(t)) => Err(CaptionError::Unavailable(t.to_string())),
        }
    }
}

const MOCK_VOCABULARY: &[&str] = &[
    "a", "the", "dog", "cat", "person", "car", "tree", "house", "street", "river", "mountain", "beach", "bird",
    "flower", "table", "window", "red", "blue", "green", "white", "black", "old", "small", "large", "sitting",
    "standing", "near", "on", "with", "in", "front", "of", "building", "sky",
];

/// Deterministic caption for an id with no fixture: words chosen by a hash
/// of the id.
pub fn hashed_caption(id: &str, words: usize) -> String {
    let mut state = fnv1a64(id.as_bytes());
    (0..words)
        .map(|_| MOCK_VOCABULARY[(splitmix64(&mut state) % MOCK_VOCABULARY.len() as u64) as usize])
        .collect::<Vec<_>>()
        .join(" ")
}

/// In-process captioner: fixture lookup, falling back to [`hashed_caption`].
///
/// With `fail_every = Some(n)`, the n-th, 2n-th, ... calls fail with
/// [`CaptionError::Unavailable`], except that no id is failed twice.
pub struct MockCaptioner {
    captioner_id: String,
    fixtures: HashMap<String, String>,
    fail_every: Option<usize>,
    state: Mutex<MockState>,
}

#[derive(Default)]
struct MockState {
    calls: Vec<String>,
    failed_ids: HashSet<String>,
    failures: usize,
}

impl Default for MockCaptioner {
    fn default() -> Self {
        Self::new("mock-captioner-v1")
    }
}

impl MockCaptioner {
    pub fn new(captioner_id: impl Into<String>) -> Self {
        MockCaptioner {
            captioner_id: captioner_id.into(),
            fixtures: HashMap::new(),
            fail_every: None,
            state: Mutex::new(MockState::default()),
        }
    }

    pub fn with_fixture(mut self, id: impl Into<String>, caption: impl Into<String>) -> Self {
        self.fixtures.insert(id.into(), caption.into());
        self
    }

    pub fn with_fixtures(mut self, fixtures: HashMap<String, String>) -> Self {
        self.fixtures.extend(fixtures);
        self
    }

    pub fn failing_every(mut self, n: usize) -> Self {
        self.fail_every = (n > 0).then_some(n);
        self
    }

    /// Ids of every call received, in arrival order.
    pub fn call_log(&self) -> Vec<String> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().calls.len()
    }

    pub fn failure_count(&self) -> usize {
        self.state.lock().unwrap().failures
    }

    pub fn respond(&self, id: &str) -> String {
        self.fixtures.get(id).cloned().unwrap_or_else(|| hashed_caption(id, 6))
    }
}

impl CaptionerClient for MockCaptioner {
    fn captioner_id(&self) -> &str {
        &self.captioner_id
    }

    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, CaptionError> {
        {
            let mut state = self.state.lock().unwrap();
            state.calls.push(request.id.clone());
            let n = state.calls.len();
            if let Some(every) = self.fail_every {
                if n.is_multiple_of(every) && state.failed_ids.insert(request.id.clone()) {
                    state.failures += 1;
                    return Err(CaptionError::Unavailable(format!("injected failure on call {n}")));
                }
            }
        }
        Ok(CaptionResponse {
            id: request.id.clone(),
            caption: self.respond(&request.id),
            model: self.captioner_id.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Image payloads

pub trait ImageSource: Sync {
    fn load(&self, record: &CatalogRecord) -> Result<Vec<u8>, String>;
}

/// Synthetic payloads (the id bytes) for tests and dry runs.
pub struct FixtureImages;

impl ImageSource for FixtureImages {
    fn load(&self, record: &CatalogRecord) -> Result<Vec<u8>, String> {
        Ok(record.id.as_bytes().to_vec())
    }
}

/// Images stored as `<dir>/<id>` with an optional common extension.
pub struct DirectoryImages {
    pub dir: PathBuf,
}

impl ImageSource for DirectoryImages {
    fn load(&self, record: &CatalogRecord) -> Result<Vec<u8>, String> {
        for ext in ["", ".jpg", ".jpeg", ".png", ".webp"] {
            let path = self.dir.join(format!("{}{ext}", record.id));
            if path.is_file() {
                return std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()));
            }
        }
        Err(format!("no image for `{}` under {}", record.id, self.dir.display()))
    }
}

// ---------------------------------------------------------------------------
// Cache and batch driver

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub captioner_id: String,
    pub preprocess: PreprocessPlan,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl CaptionRecord {
    pub fn cache_key(&self) -> CacheKey {
        CacheKey {
            image_id: self.image_id.clone(),
            captioner_id: self.captioner_id.clone(),
            preprocess: self.preprocess.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub image_id: String,
    pub captioner_id: String,
    pub preprocess: String,
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("io error on caption cache: {0}")]
    Io(#[from] std::io::Error),
    #[error("caption cache line {line} is corrupt: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// Caption cache, optionally persisted as JSON-Lines. Each insert appends
/// and flushes one complete line.
pub struct CaptionCache {
    entries: HashMap<CacheKey, CaptionRecord>,
    file: Option<File>,
}

impl CaptionCache {
    pub fn in_memory() -> Self {
        CaptionCache { entries: HashMap::new(), file: None }
    }

    /// Opens (creating if needed) a cache file. A torn final line from an
    /// interrupted run is ignored; corruption anywhere else is an error.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CaptionRecord>(line) {
                    Ok(rec) => {
                        entries.insert(rec.cache_key(), rec);
                    }
                    Err(_) if i + 1 == last => {}
                    Err(e) => return Err(CacheError::Corrupt { line: i + 1, reason: e.to_string() }),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        // Terminate a torn line so the next append starts cleanly.
        let len = file.metadata()?.len();
        if len > 0 {
            let bytes = std::fs::read(path)?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n")?;
            }
        }
        Ok(CaptionCache { entries, file: Some(file) })
    }

    pub fn get(&self, key: &CacheKey) -> Option<&CaptionRecord> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, record: CaptionRecord) -> Result<(), CacheError> {
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("caption record serializes");
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        self.entries.insert(record.cache_key(), record);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(100) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

pub trait Clock: Sync {
    fn now(&self) -> u64;
}

/// Wall clock, unless `SOURCE_DATE_EPOCH` pins it.
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
            return epoch;
        }
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub image_id: String,
    pub attempts: u32,
    pub reason: String,
    /// True when the final failure was a retryable unavailability.
    pub unavailable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    /// One record per successfully captioned input, in input order.
    pub captions: Vec<CaptionRecord>,
    pub dead_letters: Vec<DeadLetter>,
    pub cache_hits: usize,
    pub service_calls: usize,
    pub retried_calls: usize,
}

pub struct BatchOptions<'a> {
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub clock: &'a dyn Clock,
}

impl Default for BatchOptions<'_> {
    fn default() -> Self {
        BatchOptions { concurrency: 1, retry: RetryPolicy::default(), clock: &SystemClock }
    }
}

enum Outcome {
    Done(CaptionRecord, u32),
    Failed(DeadLetter),
}

fn caption_one(
    record: &CatalogRecord,
    plan: PreprocessPlan,
    client: &dyn CaptionerClient,
    images: &dyn ImageSource,
    options: &BatchOptions<'_>,
) -> Outcome {
    let payload = match images.load(record) {
        Ok(bytes) => bytes,
        Err(reason) => {
            return Outcome::Failed(DeadLetter {
                image_id: record.id.clone(),
                attempts: 0,
                reason: CaptionError::ImageLoad { id: record.id.clone(), reason }.to_string(),
                unavailable: false,
            })
        }
    };
    let request = CaptionRequest {
        id: record.id.clone(),
        image_b64: base64::engine::general_purpose::STANDARD.encode(payload),
        max_side: plan.target_side,
    };
    let attempts = options.retry.attempts.max(1);
    let mut last_error = None;
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(options.retry.backoff(attempt - 1));
        }
        match client.caption(&request).and_then(|r| check_response(&request, &r).map(|_| r)) {
            Ok(response) => {
                return Outcome::Done(
                    CaptionRecord {
                        image_id: record.id.clone(),
                        caption: response.caption,
                        captioner_id: client.captioner_id().to_string(),
                        preprocess: plan,
                        created_at: options.clock.now(),
                    },
                    attempt,
                )
            }
            Err(e) if e.is_retryable() => last_error = Some((e, attempt)),
            Err(e) => {
                return Outcome::Failed(DeadLetter {
                    image_id: record.id.clone(),
                    attempts: attempt,
                    reason: e.to_string(),
                    unavailable: false,
                })
            }
        }
    }
    let (error, attempt) = last_error.expect("at least one attempt");
    Outcome::Failed(DeadLetter {
        image_id: record.id.clone(),
        attempts: attempt,
        reason: error.to_string(),
        unavailable: true,
    })
}

/// Captions every record not already in `cache`.
///
/// At most `options.concurrency` requests are in flight. Successful records
/// are written to the cache as they complete.
pub fn caption_batch(
    records: &[CatalogRecord],
    client: &dyn CaptionerClient,
    images: &dyn ImageSource,
    cache: &mut CaptionCache,
    options: &BatchOptions<'_>,
) -> Result<BatchReport, CacheError> {
    let mut report = BatchReport::default();
    let mut slots: Vec<Option<CaptionRecord>> = vec![None; records.len()];
    let mut pending = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let plan = preprocess_plan(record.width, record.height);
        let key = CacheKey {
            image_id: record.id.clone(),
            captioner_id: client.captioner_id().to_string(),
            preprocess: plan.fingerprint(),
        };
        match cache.get(&key) {
            Some(hit) => {
                slots[i] = Some(hit.clone());
                report.cache_hits += 1;
            }
            None => pending.push((i, plan)),
        }
    }

    let workers = options.concurrency.max(1).min(pending.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Outcome)>();
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let job = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, plan)) = pending.get(job) else { break };
                let outcome = caption_one(&records[i], plan, client, images, options);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, outcome) in rx {
            match outcome {
                Outcome::Done(record, attempts) => {
                    report.service_calls += attempts as usize;
                    report.retried_calls += attempts as usize - 1;
                    if write_error.is_none() {
                        if let Err(e) = cache.insert(record.clone()) {
                            write_error = Some(e);
                        }
                    }
                    slots[i] = Some(record);
                }
                Outcome::Failed(letter) => {
                    report.service_calls += letter.attempts as usize;
                    report.retried_calls += (letter.attempts as usize).saturating_sub(1);
                    report.dead_letters.push(letter);
                }
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    report.captions = slots.into_iter().flatten().collect();
    let order: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    report.dead_letters.sort_by_key(|d| order.get(d.image_id.as_str()).copied());
    Ok(report)
}

/// Loads a caption-per-line text file or a JSON-Lines caption cache.
pub fn read_captions(path: &Path) -> std::io::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let is_cache = lines.peek().is_some_and(|l| serde_json::from_str::<CaptionRecord>(l).is_ok());
    // In a cache file, unparseable lines are torn appends, not captions.
    Ok(lines
        .filter_map(|line| match serde_json::from_str::<CaptionRecord>(line) {
            Ok(rec) => Some(rec.caption),
            Err(_) if is_cache => None,
            Err(_) => Some(line.to_string()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_examples() {
        assert_eq!(
            preprocess_plan(1024, 768),
            PreprocessPlan { crop_x: 128, crop_y: 0, crop_side: 768, target_side: 512 }
        );
        assert_eq!(
            preprocess_plan(512, 512),
            PreprocessPlan { crop_x: 0, crop_y: 0, crop_side: 512, target_side: 512 }
        );
        assert_eq!(
            preprocess_plan(300, 400),
            PreprocessPlan { crop_x: 0, crop_y: 50, crop_side: 300, target_side: 300 }
        );
        assert_eq!(preprocess_plan(1, 1).target_side, 1);
        assert_eq!(preprocess_plan(3, 8).crop_y, 2);
    }

    #[test]
    fn alt_text_examples() {
        assert!(!usable_alt_text(Some("SONY+DSC"), None));
        assert!(usable_alt_text(None, Some("A living room with a white couch")));
        assert!(!usable_alt_text(None, None));
    }

    #[test]
    fn alt_text_blacklist_is_separator_and_case_insensitive() {
        for s in ["OLYMPUS+DIGITAL+CAMERA", "Olympus digital camera", "Exif_JPEG_PICTURE", ".", "  sony dsc "] {
            assert!(!usable_alt_text(Some(s), None), "{s}");
        }
        assert!(!usable_alt_text(Some("http://www.eye.fi"), Some("   ")));
        assert!(!usable_alt_text(Some("IMG 1234"), None));
        assert!(usable_alt_text(Some("SONY DSC"), Some("children playing in the park")));
    }

    #[test]
    fn custom_blacklist() {
        let f = AltTextFilter::from_patterns(["Effortlessly uploaded by Eye-Fi"]);
        assert!(!f.field_usable("Effortlessly+uploaded+by+Eye-Fi"));
        // Default patterns are not implied by a custom list.
        assert!(!f.field_usable("SONY DSC"));
        assert!(f.field_usable("OLYMPUS DIGITAL CAMERA"));
    }

    #[test]
    fn caption_stats_hand_counts() {
        let s = caption_stats(["a black and white cartoon dog"]);
        assert_eq!((s.total_trigrams, s.unique_trigrams, s.trigram_ratio), (4, 4, 1.0));
        assert_eq!(s.mean_tokens, 6.0);
        let s = caption_stats(["a black and white cartoon dog"; 2]);
        assert_eq!((s.total_trigrams, s.unique_trigrams, s.trigram_ratio), (8, 4, 0.5));
        let empty = caption_stats(Vec::<String>::new());
        assert_eq!((empty.n_captions, empty.trigram_ratio), (0, 0.0));
    }

    #[test]
    fn trigrams_do_not_span_captions() {
        let s = caption_stats(["one two", "three four"]);
        assert_eq!(s.total_trigrams, 0);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(400));
    }

    #[test]
    fn mock_is_deterministic() {
        let m = MockCaptioner::default();
        assert_eq!(m.respond("abc"), MockCaptioner::default().respond("abc"));
        assert_eq!(hashed_caption("abc", 6).split(' ').count(), 6);
    }

    #[test]
    fn response_checks() {
        let req = CaptionRequest { id: "a".into(), image_b64: String::new(), max_side: 512 };
        let good = CaptionResponse { id: "a".into(), caption: "x".into(), model: "m".into() };
        assert!(check_response(&req, &good).is_ok());
        let wrong_id = CaptionResponse { id: "b".into(), ..good.clone() };
        assert!(matches!(check_response(&req, &wrong_id), Err(CaptionError::Malformed(_))));
        let empty = CaptionResponse { caption: " ".into(), ..good };
        assert!(matches!(check_response(&req, &empty), Err(CaptionError::Malformed(_))));
    }
}
