use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CacheKey, ChatRequest, ChatResponse};
use crate::error::Result;
use crate::jsonl::JsonlLog;

/// One cached exchange, stored verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: CacheKey,
    pub request: ChatRequest,
    pub response: ChatResponse,
    /// Seconds since the Unix epoch when the record was written.
    pub timestamp: u64,
}

/// Append-only response cache. Lookups take a read lock; appends are
/// serialized through the underlying log.
#[derive(Debug)]
pub struct ResponseCache {
    log: JsonlLog<CacheRecord>,
    entries: RwLock<HashMap<CacheKey, ChatResponse>>,
}

impl ResponseCache {
    /// Opens or creates the cache file. When a digest appears more than
    /// once, the first record wins.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (log, records) = JsonlLog::<CacheRecord>::open(path)?;
        let mut entries = HashMap::with_capacity(records.len());
        for r in records {
            entries.entry(r.digest).or_insert(r.response);
        }
        Ok(ResponseCache {
            log,
            entries: RwLock::new(entries),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<ChatResponse> {
        self.entries
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(key)
            .cloned()
    }

    pub fn put(&self, key: &CacheKey, request: &ChatRequest, response: &ChatResponse) -> Result<()> {
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        if entries.contains_key(key) {
            return Ok(());
        }
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.log.append(&CacheRecord {
            digest: key.clone(),
            request: request.clone(),
            response: response.clone(),
            timestamp,
        })?;
        entries.insert(key.clone(), response.clone());
        Ok(())
    }

    /// Every cached response, sorted by digest.
    pub fn entries(&self) -> Vec<(CacheKey, ChatResponse)> {
        let mut out: Vec<_> = self
            .entries
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }
}
