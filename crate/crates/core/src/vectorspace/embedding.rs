use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{dense_cosine, tokenize, CosineSpace};
use crate::corpus::RequirementRecord;
use crate::error::{Error, Result};
use crate::store::JsonlStore;

/// Anything that turns sentences into dense vectors.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifies the encoder; part of every cache key.
    fn tag(&self) -> &str;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Vectors keyed by (provider tag, text). Safe for concurrent use.
pub struct EmbeddingCache {
    store: JsonlStore<Vec<f64>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache {
            store: JsonlStore::in_memory(),
        }
    }

    pub fn open(dir: &std::path::Path) -> Result<Self> {
        Ok(EmbeddingCache {
            store: JsonlStore::open(dir)?,
        })
    }

    pub fn get(&self, tag: &str, text: &str) -> Option<Vec<f64>> {
        self.store.get(tag, text)
    }

    pub fn insert(&self, tag: &str, text: &str, v: Vec<f64>) -> Result<Vec<f64>> {
        self.store.insert(tag, text, v)
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

/// Deterministic pseudo-encoder: each token maps to a fixed pseudo-random
/// direction seeded by its SHA-256; a sentence is the L2-normalized sum of
/// its token directions. Sentences sharing words land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    tag: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            dim,
            tag: format!("hash-d{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let seed: [u8; 32] = Sha256::digest(tok.as_bytes()).into();
            let mut rng = ChaCha8Rng::from_seed(seed);
            for x in v.iter_mut() {
                *x += rng.gen_range(-1.0..1.0);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub row_ids: Vec<u64>,
    pub provider_tag: String,
}

impl CosineSpace for EmbeddingMatrix {
    type Query = [f64];

    fn rows(&self) -> usize {
        self.rows.len()
    }

    fn row_id(&self, row: usize) -> u64 {
        self.row_ids[row]
    }

    fn cosine(&self, row: usize, query: &[f64]) -> f64 {
        dense_cosine(&self.rows[row], query)
    }
}

/// Looks up or computes the vector of a single text through `cache`.
pub fn embed_cached(provider: &dyn EmbeddingProvider, cache: &EmbeddingCache, text: &str) -> Result<Vec<f64>> {
    if let Some(v) = cache.get(provider.tag(), text) {
        return Ok(v);
    }
    let mut out = provider.embed(&[text.to_string()])?;
    if out.len() != 1 {
        return Err(Error::Embedding(format!(
            "{} returned {} vectors for 1 text",
            provider.tag(),
            out.len()
        )));
    }
    let v = out.remove(0);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Embedding(format!(
            "{} returned a non-finite vector",
            provider.tag()
        )));
    }
    cache.insert(provider.tag(), text, v)
}

/// Embeds every candidate, one row each.
///
/// Only texts missing from `cache` reach the provider, deduplicated and cut
/// into batches of `batch_size`; up to `parallelism` batches are in flight at
/// once. A batch whose call fails, or a row of the wrong length or with
/// non-finite values, fails the whole build with the batch or record named.
pub fn build_embedding_matrix(
    candidates: &[RequirementRecord],
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    batch_size: usize,
    parallelism: usize,
) -> Result<EmbeddingMatrix> {
    if candidates.is_empty() {
        return Err(Error::Embedding("no candidates to embed".into()));
    }
    let tag = provider.tag().to_string();
    // text -> first record carrying it, for error attribution
    let mut missing: BTreeMap<&str, u64> = BTreeMap::new();
    for c in candidates {
        if cache.get(&tag, &c.text).is_none() {
            missing.entry(c.text.as_str()).or_insert(c.record_id);
        }
    }
    let missing: Vec<(&str, u64)> = missing.into_iter().collect();
    let batches: Vec<&[(&str, u64)]> = missing.chunks(batch_size.max(1)).collect();

    let run = |(bi, batch): (usize, &&[(&str, u64)])| -> Result<()> {
        let texts: Vec<String> = batch.iter().map(|(t, _)| t.to_string()).collect();
        let vecs = provider.embed(&texts).map_err(|e| {
            Error::Embedding(format!(
                "batch {bi} (records {}..={}) failed: {e}",
                batch.first().map(|b| b.1).unwrap_or(0),
                batch.last().map(|b| b.1).unwrap_or(0)
            ))
        })?;
        if vecs.len() != texts.len() {
            return Err(Error::Embedding(format!(
                "batch {bi}: provider returned {} vectors for {} texts",
                vecs.len(),
                texts.len()
            )));
        }
        for ((text, rid), v) in batch.iter().zip(vecs) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Embedding(format!("record {rid}: non-finite embedding")));
            }
            cache.insert(&tag, text, v)?;
        }
        Ok(())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Embedding(format!("thread pool: {e}")))?;
    pool.install(|| batches.par_iter().enumerate().try_for_each(run))?;

    let mut rows = Vec::with_capacity(candidates.len());
    let mut dim = None;
    for c in candidates {
        let v = cache
            .get(&tag, &c.text)
            .ok_or_else(|| Error::Embedding(format!("record {}: vector missing after build", c.record_id)))?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::Embedding(format!(
                    "record {}: dimension {} differs from {d}",
                    c.record_id,
                    v.len()
                )))
            }
            _ => {}
        }
        rows.push(v);
    }
    let dim = dim.unwrap_or(0);
    if dim == 0 {
        return Err(Error::Embedding(format!("{tag} produced zero-dimensional vectors")));
    }
    Ok(EmbeddingMatrix {
        dim,
        rows,
        row_ids: candidates.iter().map(|c| c.record_id).collect(),
        provider_tag: tag,
    })
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<T> {
    fn tag(&self) -> &str {
        (**self).tag()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
}
