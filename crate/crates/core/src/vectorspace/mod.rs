//! Vector spaces over few-shot candidates and cosine k-nearest-neighbour
//! retrieval.

mod embedding;
mod tfidf;

use std::cmp::Ordering;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embedding::{
    build_embedding_matrix, embed_cached, EmbeddingCache, EmbeddingMatrix, EmbeddingProvider, HashEmbedder,
};
pub use tfidf::{embed_query_tfidf, fit_tfidf, SparseVec, TfidfModel, Vocabulary};

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub record_id: u64,
    pub similarity: f64,
}

/// A fitted set of row vectors that can be scored against a query by cosine.
pub trait CosineSpace {
    type Query: ?Sized;

    fn rows(&self) -> usize;
    fn row_id(&self, row: usize) -> u64;
    /// Cosine between `row` and `query`; 0 when either vector is zero.
    fn cosine(&self, row: usize, query: &Self::Query) -> f64;
}

/// The `min(k, N)` rows most similar to `query`, by descending cosine with
/// ties broken by ascending row index.
pub fn knn<S: CosineSpace>(space: &S, query: &S::Query, k: usize) -> Vec<Neighbor> {
    knn_excluding(space, query, k, None)
}

pub fn knn_excluding<S: CosineSpace>(space: &S, query: &S::Query, k: usize, exclude: Option<u64>) -> Vec<Neighbor> {
    let mut scored: Vec<(usize, f64)> = (0..space.rows())
        .filter(|&row| Some(space.row_id(row)) != exclude)
        .map(|row| (row, space.cosine(row, query)))
        .collect();
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    scored
        .into_iter()
        .take(k)
        .map(|(row, similarity)| Neighbor {
            record_id: space.row_id(row),
            similarity,
        })
        .collect()
}

pub(crate) fn cosine_from_parts(dot: f64, norm_a_sq: f64, norm_b_sq: f64) -> f64 {
    if norm_a_sq <= 0.0 || norm_b_sq <= 0.0 {
        return 0.0;
    }
    (dot / (norm_a_sq.sqrt() * norm_b_sq.sqrt())).clamp(-1.0, 1.0)
}

pub fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    cosine_from_parts(dot, na, nb)
}

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// On-disk wrapper for fitted spaces, keyed by the content hash of the
/// candidate set they were fitted on.
#[derive(Debug, Serialize, Deserialize)]
pub struct SpaceArtifact<T> {
    pub format_version: u32,
    pub kind: String,
    pub content_hash: String,
    pub space: T,
}

pub fn save_space<T: Serialize>(path: &Path, kind: &str, content_hash: &str, space: &T) -> Result<()> {
    let artifact = SpaceArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        kind: kind.to_string(),
        content_hash: content_hash.to_string(),
        space,
    };
    crate::report::write_atomic(path, serde_json::to_string(&artifact)?.as_bytes())
}

/// Loads a saved space; `Ok(None)` when the file is absent, stale (other
/// content hash) or from another format version.
pub fn load_space<T: DeserializeOwned>(path: &Path, kind: &str, content_hash: &str) -> Result<Option<T>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let artifact: SpaceArtifact<T> = serde_json::from_str(&text)?;
    if artifact.format_version != ARTIFACT_FORMAT_VERSION
        || artifact.kind != kind
        || artifact.content_hash != content_hash
    {
        return Ok(None);
    }
    Ok(Some(artifact.space))
}
