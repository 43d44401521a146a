//! Precomputed latents persisted in checksummed binary shards.
//!
//! Shard layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CCLATENT"
//! version      u16
//! entry_count  u32
//! index        entry_count x (id_hash u64, offset u64), sorted by hash
//! entries      entry_count x block
//!                block = id_len u16 | id bytes | c u32 | h u32 | w u32 | c*h*w f32
//! checksum     u64       FNV-1a over every preceding byte
//! ```
//!
//! Entries are written in index order, so offsets strictly increase. Ids
//! whose hashes collide sit next to each other and are resolved by a linear
//! scan over the equal-hash run.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogRecord;
use crate::fnv::{fnv1a64, splitmix64};

pub const MAGIC: &[u8; 8] = b"CCLATENT";
pub const VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const HEADER_LEN: usize = 8 + 2 + 4;
const INDEX_ENTRY_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("latent `{0}` not found")]
    NotFound(String),
    #[error("shard {path} failed checksum verification")]
    ChecksumMismatch { path: PathBuf },
    #[error("shard {path} is malformed: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("writing shard {path}: {source}")]
    ShardWrite { path: PathBuf, source: std::io::Error },
    #[error("entry `{id}` is invalid: {reason}")]
    InvalidEntry { id: String, reason: String },
    #[error("shard_size must be at least 1")]
    ZeroShardSize,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentDims {
    pub c: u32,
    pub h: u32,
    pub w: u32,
}

impl LatentDims {
    pub fn new(c: u32, h: u32, w: u32) -> Self {
        LatentDims { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c as usize * self.h as usize * self.w as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentEntry {
    pub image_id: String,
    pub dims: LatentDims,
    pub payload: Vec<f32>,
}

impl LatentEntry {
    pub fn validate(&self) -> Result<(), LatentError> {
        let invalid = |reason: String| LatentError::InvalidEntry { id: self.image_id.clone(), reason };
        if self.image_id.is_empty() || self.image_id.len() > u16::MAX as usize {
            return Err(invalid("id must be 1..=65535 bytes".into()));
        }
        if self.payload.len() != self.dims.len() {
            return Err(invalid(format!(
                "payload has {} values, dims require {}",
                self.payload.len(),
                self.dims.len()
            )));
        }
        if let Some(pos) = self.payload.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at {pos}")));
        }
        Ok(())
    }
}

/// Serialises entries into shard bytes.
pub fn encode_shard(entries: &[LatentEntry]) -> Result<Vec<u8>, LatentError> {
    let mut seen = HashSet::new();
    for e in entries {
        e.validate()?;
        if !seen.insert(e.image_id.as_str()) {
            return Err(LatentError::InvalidEntry { id: e.image_id.clone(), reason: "duplicate id in shard".into() });
        }
    }
    let count = u32::try_from(entries.len()).map_err(|_| LatentError::InvalidEntry {
        id: String::new(),
        reason: "too many entries for one shard".into(),
    })?;
    let mut order: Vec<(u64, &LatentEntry)> = entries.iter().map(|e| (fnv1a64(e.image_id.as_bytes()), e)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.image_id.cmp(&b.1.image_id)));

    let mut index = Vec::with_capacity(order.len());
    let mut body = Vec::new();
    let mut offset = (HEADER_LEN + INDEX_ENTRY_LEN * order.len()) as u64;
    for (hash, entry) in &order {
        index.push((*hash, offset));
        let start = body.len();
        body.extend_from_slice(&(entry.image_id.len() as u16).to_le_bytes());
        body.extend_from_slice(entry.image_id.as_bytes());
        for d in [entry.dims.c, entry.dims.h, entry.dims.w] {
            body.extend_from_slice(&d.to_le_bytes());
        }
        for v in &entry.payload {
            body.extend_from_slice(&v.to_le_bytes());
        }
        offset += (body.len() - start) as u64;
    }

    let mut out = Vec::with_capacity(HEADER_LEN + INDEX_ENTRY_LEN * index.len() + body.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (hash, off) in &index {
        out.extend_from_slice(&hash.to_le_bytes());
        out.extend_from_slice(&off.to_le_bytes());
    }
    out.extend_from_slice(&body);
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

/// Writes a shard atomically: a temporary sibling is written, synced and
/// renamed into place. On failure no file remains at `path`.
pub fn write_shard(path: &Path, entries: &[LatentEntry]) -> Result<(), LatentError> {
    let bytes = encode_shard(entries)?;
    let tmp = path.with_extension("tmp");
    let wrap = |source| LatentError::ShardWrite { path: path.to_path_buf(), source };
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(wrap(e));
    }
    Ok(())
}

/// A verified, in-memory shard.
#[derive(Debug, Clone)]
pub struct LatentShard {
    path: PathBuf,
    bytes: Vec<u8>,
    index: Vec<(u64, u64)>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

impl LatentShard {
    pub fn open(path: &Path) -> Result<Self, LatentError> {
        Self::from_bytes(path, fs::read(path)?)
    }

    /// Verifies magic, checksum and index structure.
    pub fn from_bytes(path: &Path, bytes: Vec<u8>) -> Result<Self, LatentError> {
        let malformed = |reason: &str| LatentError::Malformed { path: path.to_path_buf(), reason: reason.to_string() };
        if bytes.len() < HEADER_LEN + 8 {
            return Err(malformed("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(malformed("bad magic"));
        }
        let (content, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(content) != stored {
            return Err(LatentError::ChecksumMismatch { path: path.to_path_buf() });
        }
        let mut cur = Cursor { bytes: content, pos: 8 };
        let version = cur.u16().ok_or_else(|| malformed("truncated header"))?;
        if version != VERSION {
            return Err(malformed(&format!("unsupported version {version}")));
        }
        let count = cur.u32().ok_or_else(|| malformed("truncated header"))? as usize;
        let mut index = Vec::with_capacity(count.min(content.len() / INDEX_ENTRY_LEN));
        for _ in 0..count {
            let hash = cur.u64().ok_or_else(|| malformed("truncated index"))?;
            let off = cur.u64().ok_or_else(|| malformed("truncated index"))?;
            index.push((hash, off));
        }
        let body_start = cur.pos as u64;
        for (i, &(hash, off)) in index.iter().enumerate() {
            if i == 0 && off != body_start {
                return Err(malformed("first offset does not follow the index"));
            }
            if i > 0 && (off <= index[i - 1].1 || hash < index[i - 1].0) {
                return Err(malformed("index not sorted"));
            }
            if off as usize >= content.len() {
                return Err(malformed("offset past end"));
            }
        }
        let shard = LatentShard { path: path.to_path_buf(), bytes, index };
        for i in 0..shard.index.len() {
            shard.entry_at(i)?;
        }
        Ok(shard)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn entry_at(&self, i: usize) -> Result<LatentEntry, LatentError> {
        let malformed = |reason: &str| LatentError::Malformed { path: self.path.clone(), reason: reason.to_string() };
        let content = &self.bytes[..self.bytes.len() - 8];
        let mut cur = Cursor { bytes: content, pos: self.index[i].1 as usize };
        let id_len = cur.u16().ok_or_else(|| malformed("truncated entry"))? as usize;
        let id = std::str::from_utf8(cur.take(id_len).ok_or_else(|| malformed("truncated id"))?)
            .map_err(|_| malformed("id is not utf-8"))?
            .to_string();
        let c = cur.u32().ok_or_else(|| malformed("truncated dims"))?;
        let h = cur.u32().ok_or_else(|| malformed("truncated dims"))?;
        let w = cur.u32().ok_or_else(|| malformed("truncated dims"))?;
        let dims = LatentDims { c, h, w };
        let raw = cur
            .take(dims.len().checked_mul(4).ok_or_else(|| malformed("dims overflow"))?)
            .ok_or_else(|| malformed("truncated payload"))?;
        let end = self.index.get(i + 1).map_or(content.len(), |next| next.1 as usize);
        if cur.pos != end {
            return Err(malformed("entry length disagrees with index"));
        }
        if fnv1a64(id.as_bytes()) != self.index[i].0 {
            return Err(malformed("index hash does not match entry id"));
        }
        let payload = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(LatentEntry { image_id: id, dims, payload })
    }

    fn entry_id(&self, i: usize) -> &str {
        let pos = self.index[i].1 as usize;
        let len = u16::from_le_bytes([self.bytes[pos], self.bytes[pos + 1]]) as usize;
        std::str::from_utf8(&self.bytes[pos + 2..pos + 2 + len]).unwrap_or("")
    }

    pub fn get(&self, image_id: &str) -> Result<LatentEntry, LatentError> {
        let hash = fnv1a64(image_id.as_bytes());
        let mut i = self.index.partition_point(|&(h, _)| h < hash);
        while i < self.index.len() && self.index[i].0 == hash {
            if self.entry_id(i) == image_id {
                return self.entry_at(i);
            }
            i += 1;
        }
        Err(LatentError::NotFound(image_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        (0..self.index.len()).map(|i| self.entry_id(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = LatentEntry> + '_ {
        (0..self.index.len()).map(|i| self.entry_at(i).expect("verified at open"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub entry_count: usize,
    pub first_id: String,
    pub last_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shards: Vec<ShardInfo>,
}

impl ShardManifest {
    pub fn load(dir: &Path) -> Result<Self, LatentError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(ShardManifest::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<(), LatentError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

/// Every shard listed in a directory's manifest, opened and verified.
pub struct LatentStore {
    shards: Vec<(ShardInfo, LatentShard)>,
}

impl LatentStore {
    pub fn open(dir: &Path) -> Result<Self, LatentError> {
        let manifest = ShardManifest::load(dir)?;
        let shards = manifest
            .shards
            .into_iter()
            .map(|info| {
                let shard = LatentShard::open(&dir.join(&info.path))?;
                Ok((info, shard))
            })
            .collect::<Result<Vec<_>, LatentError>>()?;
        Ok(LatentStore { shards })
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> impl Iterator<Item = &LatentShard> {
        self.shards.iter().map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, image_id: &str) -> Result<LatentEntry, LatentError> {
        for (info, shard) in &self.shards {
            if image_id < info.first_id.as_str() || image_id > info.last_id.as_str() {
                continue;
            }
            match shard.get(image_id) {
                Err(LatentError::NotFound(_)) => continue,
                other => return other,
            }
        }
        Err(LatentError::NotFound(image_id.to_string()))
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.shards().flat_map(|s| s.ids().map(str::to_string)).collect()
    }

    /// All entries ordered by image id.
    pub fn entries_sorted(&self) -> Vec<LatentEntry> {
        let mut all: Vec<LatentEntry> = self.shards().flat_map(|s| s.entries()).collect();
        all.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        all
    }
}

/// Maps a record to its latent.
pub trait LatentEncoder {
    fn dims(&self) -> LatentDims;
    fn encode(&self, record: &CatalogRecord) -> Result<Vec<f32>, String>;
}

/// Toy encoder: a seeded Gaussian random projection of features derived
/// from the id hash.
pub struct RandomProjectionEncoder {
    dims: LatentDims,
    projection: Vec<f32>,
}

const PROJECTION_FEATURES: usize = 16;

impl RandomProjectionEncoder {
    pub fn new(dims: LatentDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (PROJECTION_FEATURES as f64).sqrt();
        let projection = (0..dims.len() * PROJECTION_FEATURES)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale) as f32
            })
            .collect();
        RandomProjectionEncoder { dims, projection }
    }

    fn features(id: &str) -> [f32; PROJECTION_FEATURES] {
        let mut state = fnv1a64(id.as_bytes());
        let mut out = [0f32; PROJECTION_FEATURES];
        for v in &mut out {
            // uniform in [-1, 1)
            *v = ((splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32;
        }
        out
    }
}

impl LatentEncoder for RandomProjectionEncoder {
    fn dims(&self) -> LatentDims {
        self.dims
    }

    fn encode(&self, record: &CatalogRecord) -> Result<Vec<f32>, String> {
        let f = Self::features(&record.id);
        Ok(self
            .projection
            .chunks_exact(PROJECTION_FEATURES)
            .map(|row| row.iter().zip(f.iter()).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeFailure {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PrecomputeReport {
    pub new_shards: Vec<String>,
    pub encoded: usize,
    pub skipped: usize,
    pub dead_letters: Vec<EncodeFailure>,
}

fn shard_file_name(n: usize) -> String {
    format!("shard-{n:05}.cclat")
}

/// Encodes every record whose id is not already in `dir`'s shards and
/// writes the new latents in shards of at most `shard_size` entries.
///
/// The manifest is rewritten after each shard is published, so an
/// interrupted run resumes where it stopped.
pub fn precompute(
    records: &[CatalogRecord],
    encoder: &dyn LatentEncoder,
    dir: &Path,
    shard_size: usize,
) -> Result<PrecomputeReport, LatentError> {
    if shard_size == 0 {
        return Err(LatentError::ZeroShardSize);
    }
    fs::create_dir_all(dir)?;
    let mut manifest = ShardManifest::load(dir)?;
    let mut existing = HashSet::new();
    for info in &manifest.shards {
        let shard = LatentShard::open(&dir.join(&info.path))?;
        existing.extend(shard.ids().map(str::to_string));
    }

    let mut report = PrecomputeReport::default();
    let mut batch: Vec<LatentEntry> = Vec::with_capacity(shard_size);
    let flush = |batch: &mut Vec<LatentEntry>, manifest: &mut ShardManifest, report: &mut PrecomputeReport| {
        if batch.is_empty() {
            return Ok(());
        }
        let name = shard_file_name(manifest.shards.len());
        write_shard(&dir.join(&name), batch)?;
        let first_id = batch.iter().map(|e| &e.image_id).min().unwrap().clone();
        let last_id = batch.iter().map(|e| &e.image_id).max().unwrap().clone();
        manifest.shards.push(ShardInfo { path: name.clone(), entry_count: batch.len(), first_id, last_id });
        manifest.save(dir)?;
        report.new_shards.push(name);
        batch.clear();
        Ok::<(), LatentError>(())
    };

    let dims = encoder.dims();
    for record in records {
        if !existing.insert(record.id.clone()) {
            report.skipped += 1;
            continue;
        }
        let entry = encoder
            .encode(record)
            .map(|payload| LatentEntry { image_id: record.id.clone(), dims, payload })
            .and_then(|e| e.validate().map(|_| e).map_err(|err| err.to_string()));
        match entry {
            Ok(entry) => {
                report.encoded += 1;
                batch.push(entry);
                if batch.len() == shard_size {
                    flush(&mut batch, &mut manifest, &mut report)?;
                }
            }
            Err(reason) => {
                existing.remove(&record.id);
                report.dead_letters.push(EncodeFailure { image_id: record.id.clone(), reason });
            }
        }
    }
    flush(&mut batch, &mut manifest, &mut report)?;
    Ok(report)
}
