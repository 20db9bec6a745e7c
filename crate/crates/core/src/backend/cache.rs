//! Persistent score cache: an append-only record log with an in-memory index.
//!
//! Records are length-prefixed and checksummed; a truncated or corrupted tail
//! is dropped on open and the affected keys are simply rescored on demand.
//! Keys are a cryptographic hash of `(model_id, context, continuation)`; the
//! stored record keeps the full strings so hits can be verified and replayed
//! byte-identically.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendScore};
use crate::scoring::TokenLogProbs;

const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub model_id: String,
    pub context: String,
    pub continuation: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl CacheRecord {
    fn to_score(&self) -> Result<BackendScore, BackendError> {
        Ok(BackendScore {
            tokens: self.tokens.clone(),
            logprobs: TokenLogProbs::new(self.logprobs.clone())?,
            model_id: self.model_id.clone(),
            context_echo: self.context.clone(),
        })
    }
}

fn cache_key(model_id: &str, context: &str, continuation: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in [model_id, context, continuation] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.finalize().into()
}

fn payload_checksum(payload: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(payload);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

/// Append-only score log. Writes are serialized internally; reads are served
/// concurrently from the in-memory index.
pub struct ScoreCache {
    path: PathBuf,
    index: RwLock<HashMap<[u8; 32], CacheRecord>>,
    writer: Option<Mutex<File>>,
}

impl ScoreCache {
    /// Opens (creating if needed) a read-write cache at `path`.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        Self::open_inner(path, false)
    }

    /// Opens an existing cache without the ability to add records.
    pub fn open_read_only(path: &Path) -> Result<Self, BackendError> {
        Self::open_inner(path, true)
    }

    fn open_inner(path: &Path, read_only: bool) -> Result<Self, BackendError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut index = HashMap::new();
        let mut good_end = 0u64;
        if path.exists() {
            let mut file = File::open(path)?;
            let mut buf = Vec::new();
            file.read_to_end(&mut buf)?;
            let mut pos = 0usize;
            while pos + 4 + CHECKSUM_LEN <= buf.len() {
                let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
                let payload_start = pos + 4 + CHECKSUM_LEN;
                let payload_end = match payload_start.checked_add(len) {
                    Some(end) if end <= buf.len() => end,
                    _ => break, // truncated tail record
                };
                let stored_sum = &buf[pos + 4..payload_start];
                let payload = &buf[payload_start..payload_end];
                if payload_checksum(payload) != stored_sum[..] {
                    break; // corrupted record: drop it and everything after
                }
                let record: CacheRecord = match serde_json::from_slice(payload) {
                    Ok(r) => r,
                    Err(_) => break,
                };
                let key = cache_key(&record.model_id, &record.context, &record.continuation);
                index.insert(key, record);
                pos = payload_end;
                good_end = pos as u64;
            }
        }
        let writer = if read_only {
            None
        } else {
            let mut file = OpenOptions::new()
                .create(true)
                .read(true)
                .write(true)
                .open(path)?;
            // Drop any corrupt tail so new appends start at a clean boundary.
            file.set_len(good_end)?;
            file.seek(SeekFrom::End(0))?;
            Some(Mutex::new(file))
        };
        Ok(Self {
            path: path.to_path_buf(),
            index: RwLock::new(index),
            writer,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_read_only(&self) -> bool {
        self.writer.is_none()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(
        &self,
        model_id: &str,
        context: &str,
        continuation: &str,
    ) -> Option<BackendScore> {
        let key = cache_key(model_id, context, continuation);
        let index = self.index.read().unwrap();
        let record = index.get(&key)?;
        // Guard against hash collisions by comparing the stored strings.
        if record.model_id != model_id
            || record.context != context
            || record.continuation != continuation
        {
            return None;
        }
        record.to_score().ok()
    }

    pub fn put(&self, score: &BackendScore) -> Result<(), BackendError> {
        let writer = self
            .writer
            .as_ref()
            .ok_or_else(|| BackendError::InvalidSpec("cache is read-only".into()))?;
        let continuation = score.tokens.concat();
        let record = CacheRecord {
            model_id: score.model_id.clone(),
            context: score.context_echo.clone(),
            continuation: continuation.clone(),
            tokens: score.tokens.clone(),
            logprobs: score.logprobs.values().to_vec(),
        };
        let payload = serde_json::to_vec(&record)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let mut file = writer.lock().unwrap();
        file.write_all(&(payload.len() as u32).to_le_bytes())?;
        file.write_all(&payload_checksum(&payload))?;
        file.write_all(&payload)?;
        file.flush()?;
        drop(file);
        let key = cache_key(&record.model_id, &record.context, &record.continuation);
        self.index.write().unwrap().insert(key, record);
        Ok(())
    }

    /// Snapshot of all live records, for export and inspection.
    pub fn records(&self) -> Vec<CacheRecord> {
        let index = self.index.read().unwrap();
        let mut records: Vec<CacheRecord> = index.values().cloned().collect();
        records.sort_by(|a, b| {
            (&a.model_id, &a.context, &a.continuation)
                .cmp(&(&b.model_id, &b.context, &b.continuation))
        });
        records
    }
}

/// Wraps a backend with the persistent cache. With no inner backend the
/// wrapper serves cache hits only and reports misses as offline errors.
pub struct CachedBackend<B: Backend> {
    cache: Arc<ScoreCache>,
    inner: Option<B>,
    model_id: String,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(cache: Arc<ScoreCache>, inner: B) -> Self {
        let model_id = inner.model_id().to_string();
        Self {
            cache,
            inner: Some(inner),
            model_id,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Cache-only mode: hits are served, misses fail with an offline error.
    pub fn offline(cache: Arc<ScoreCache>, model_id: String) -> Self {
        Self {
            cache,
            inner: None,
            model_id,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Number of requests forwarded to the wrapped backend.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<BackendScore, BackendError> {
        if let Some(score) = self.cache.get(&self.model_id, context, continuation) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(score);
        }
        let inner = self.inner.as_ref().ok_or(BackendError::OfflineMiss)?;
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let score = inner.score_continuation(context, continuation)?;
        if !self.cache.is_read_only() {
            self.cache.put(&score)?;
        }
        Ok(score)
    }
}
