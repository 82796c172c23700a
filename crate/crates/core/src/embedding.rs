//! Sentence embeddings: storage, cosine similarity, ranking, and cached
//! corpus embedding.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::jsonl::JsonlLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("embedding vector must have dim > 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("embedding entry {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.0
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "cosine of vectors with dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimilarityOrder {
    MostSimilar,
    LeastSimilar,
}

/// Embeddings for one corpus from one provider/model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    provenance: String,
    dim: Option<usize>,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(provenance: impl Into<String>) -> Self {
        EmbeddingStore {
            provenance: provenance.into(),
            dim: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Vector length shared by every entry; `None` while the store is empty.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Inserts or replaces the vector for `id`. Fails if its length differs
    /// from the vectors already stored.
    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<()> {
        match self.dim {
            Some(dim) if dim != vector.dim() => {
                return Err(Error::Provenance(format!(
                    "store {} holds dim {dim}, got dim {}",
                    self.provenance,
                    vector.dim()
                )))
            }
            Some(_) => {}
            None => self.dim = Some(vector.dim()),
        }
        self.entries.insert(id.into(), vector);
        Ok(())
    }

    fn lookup(&self, id: &str) -> Result<&EmbeddingVector> {
        self.get(id).ok_or_else(|| Error::Lookup(id.to_string()))
    }
}

/// Sorts `candidates` by cosine similarity to `query_id`. Equal
/// similarities are ordered by ascending id in both directions.
pub fn rank_by_similarity<S: AsRef<str>>(
    store: &EmbeddingStore,
    query_id: &str,
    candidates: &[S],
    order: SimilarityOrder,
) -> Result<Vec<String>> {
    let query = store.lookup(query_id)?;
    let mut scored = candidates
        .iter()
        .map(|c| {
            let id = c.as_ref();
            if id == query_id {
                return Err(Error::Contract(format!("query {id:?} listed among its own candidates")));
            }
            Ok((cosine_similarity(query, store.lookup(id)?)?, id))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(sa, ia), (sb, ib)| {
        let by_score = match order {
            SimilarityOrder::MostSimilar => sb.total_cmp(sa),
            SimilarityOrder::LeastSimilar => sa.total_cmp(sb),
        };
        by_score.then_with(|| ia.cmp(ib))
    });
    Ok(scored.into_iter().map(|(_, id)| id.to_string()).collect())
}

/// A source of sentence embeddings, usually a remote endpoint.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifies provider and model; vectors from different provenances
    /// are never mixed.
    fn provenance(&self) -> String;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn max_batch(&self) -> usize {
        64
    }
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingRecord {
    text_digest: String,
    provenance: String,
    dim: usize,
    values: EmbeddingVector,
}

/// Persistent embedding cache keyed by (provenance, text digest).
#[derive(Debug)]
pub struct EmbeddingCache {
    log: JsonlLog<EmbeddingRecord>,
    entries: RwLock<HashMap<(String, String), EmbeddingVector>>,
}

impl EmbeddingCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (log, records) = JsonlLog::<EmbeddingRecord>::open(path)?;
        let mut entries = HashMap::with_capacity(records.len());
        for r in records {
            if r.values.dim() != r.dim {
                return Err(Error::Provenance(format!(
                    "cache record {} declares dim {} but holds {} values",
                    r.text_digest,
                    r.dim,
                    r.values.dim()
                )));
            }
            entries.insert((r.provenance, r.text_digest), r.values);
        }
        Ok(EmbeddingCache {
            log,
            entries: RwLock::new(entries),
        })
    }

    pub fn get(&self, provenance: &str, text: &str) -> Option<EmbeddingVector> {
        let key = (provenance.to_string(), text_digest(text));
        self.entries.read().unwrap_or_else(|p| p.into_inner()).get(&key).cloned()
    }

    pub fn put(&self, provenance: &str, text: &str, values: &EmbeddingVector) -> Result<()> {
        let record = EmbeddingRecord {
            text_digest: text_digest(text),
            provenance: provenance.to_string(),
            dim: values.dim(),
            values: values.clone(),
        };
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        let key = (record.provenance.clone(), record.text_digest.clone());
        if entries.contains_key(&key) {
            return Ok(());
        }
        self.log.append(&record)?;
        entries.insert(key, record.values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn embed_corpus(
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    sentences: &[LabeledSentence],
) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(provider.provenance());
    embed_corpus_into(&mut store, provider, cache, sentences)?;
    Ok(store)
}

/// Adds vectors for `sentences` to an existing store. Cached vectors are
/// reused; the rest are requested in batches, in parallel on the current
/// rayon pool.
pub fn embed_corpus_into(
    store: &mut EmbeddingStore,
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    sentences: &[LabeledSentence],
) -> Result<()> {
    let provenance = provider.provenance();
    if store.provenance() != provenance {
        return Err(Error::Provenance(format!(
            "store built with {} cannot take vectors from {provenance}",
            store.provenance()
        )));
    }

    // Texts still needing a provider call, deduplicated, with the ids that use them.
    let mut missing: Vec<(String, Vec<String>)> = Vec::new();
    let mut missing_index: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        if store.contains(&s.id) {
            continue;
        }
        if let Some(v) = cache.and_then(|c| c.get(&provenance, &s.text)) {
            store.insert(s.id.clone(), v)?;
            continue;
        }
        match missing_index.get(s.text.as_str()) {
            Some(&i) => missing[i].1.push(s.id.clone()),
            None => {
                missing_index.insert(&s.text, missing.len());
                missing.push((s.text.clone(), vec![s.id.clone()]));
            }
        }
    }
    if missing.is_empty() {
        return Ok(());
    }

    let batch = provider.max_batch().max(1);
    let fetched = missing
        .par_chunks(batch)
        .map(|chunk| {
            let texts: Vec<String> = chunk.iter().map(|(t, _)| t.clone()).collect();
            let failed_ids = || chunk.iter().flat_map(|(_, ids)| ids.iter().cloned()).collect();
            let raw = provider.embed(&texts).map_err(|e| Error::EmbeddingTransport {
                ids: failed_ids(),
                message: e.to_string(),
            })?;
            if raw.len() != texts.len() {
                return Err(Error::Decode(format!(
                    "embedding provider returned {} vectors for {} inputs",
                    raw.len(),
                    texts.len()
                )));
            }
            let vectors = raw
                .into_iter()
                .map(EmbeddingVector::new)
                .collect::<Result<Vec<_>>>()?;
            Ok(chunk.iter().zip(vectors).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    for ((text, ids), vector) in fetched.into_iter().flatten() {
        for id in ids {
            store.insert(id.clone(), vector.clone())?;
        }
        if let Some(c) = cache {
            c.put(&provenance, text, &vector)?;
        }
    }
    Ok(())
}
