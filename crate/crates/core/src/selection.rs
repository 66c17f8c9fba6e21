//! Stratified few-shot pools and per-query example selection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LabelId, LabelScheme, RequirementRecord};
use crate::error::{Error, Result};
use crate::vectorspace::{embed_cached, knn_excluding, EmbeddingCache, EmbeddingMatrix, EmbeddingProvider, TfidfModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Embedding,
    Tfidf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Random, Method::Embedding, Method::Tfidf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Embedding => "embedding",
            Method::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Method::Random),
            "embedding" | "semantic" => Ok(Method::Embedding),
            "tfidf" | "tf-idf" => Ok(Method::Tfidf),
            other => Err(Error::Config(format!(
                "unknown selection method {other:?} (expected random, embedding or tfidf)"
            ))),
        }
    }
}

/// Candidate set drawn from a training partition by class round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPool {
    pub candidates: Vec<RequirementRecord>,
    pub per_class: BTreeMap<LabelId, Vec<u64>>,
    pub pool_seed: u64,
    pub source_partition: String,
}

impl FewShotPool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, record_id: u64) -> bool {
        self.candidates.iter().any(|c| c.record_id == record_id)
    }

    pub fn get(&self, record_id: u64) -> Option<&RequirementRecord> {
        self.candidates.iter().find(|c| c.record_id == record_id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.candidates.iter().map(|c| c.record_id).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<LabelId, usize> {
        self.per_class.iter().map(|(l, ids)| (*l, ids.len())).collect()
    }
}

/// Builds a pool of `size` records from `train`.
///
/// Each class's members (in record-id order) are shuffled with one seeded
/// generator, classes taken in label order. Rounds then visit every class in
/// label order and take its next record, skipping exhausted classes, until
/// `size` records are taken.
pub fn build_pool(
    train: &[RequirementRecord],
    size: usize,
    seed: u64,
    source_partition: impl Into<String>,
) -> Result<FewShotPool> {
    if size > train.len() {
        return Err(Error::Selection(format!(
            "pool size {size} exceeds the {} available training records",
            train.len()
        )));
    }
    let mut by_class: BTreeMap<LabelId, Vec<&RequirementRecord>> = BTreeMap::new();
    for r in train {
        by_class.entry(r.label).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<(LabelId, Vec<&RequirementRecord>)> = by_class
        .into_iter()
        .map(|(label, mut members)| {
            members.sort_by_key(|r| r.record_id);
            members.shuffle(&mut rng);
            (label, members)
        })
        .collect();

    let mut candidates = Vec::with_capacity(size);
    let mut per_class: BTreeMap<LabelId, Vec<u64>> = BTreeMap::new();
    let mut round = 0usize;
    while candidates.len() < size {
        for (label, members) in queues.iter_mut() {
            if candidates.len() == size {
                break;
            }
            if let Some(r) = members.get(round) {
                candidates.push((*r).clone());
                per_class.entry(*label).or_default().push(r.record_id);
            }
        }
        round += 1;
    }
    queues.clear();
    Ok(FewShotPool {
        candidates,
        per_class,
        pool_seed: seed,
        source_partition: source_partition.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub exclude_query_record: bool,
}

impl SelectionConfig {
    pub fn new(method: Method, k: usize) -> Self {
        SelectionConfig {
            method,
            k,
            seed: 0,
            exclude_query_record: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Record(&'a RequirementRecord),
    Text(&'a str),
}

impl Query<'_> {
    pub fn text(&self) -> &str {
        match self {
            Query::Record(r) => &r.text,
            Query::Text(t) => t,
        }
    }

    pub fn record_id(&self) -> Option<u64> {
        match self {
            Query::Record(r) => Some(r.record_id),
            Query::Text(_) => None,
        }
    }
}

/// Embedding space plus the encoder needed to place queries in it.
#[derive(Clone, Copy)]
pub struct EmbeddingSpace<'a> {
    pub matrix: &'a EmbeddingMatrix,
    pub provider: &'a dyn EmbeddingProvider,
    pub cache: &'a EmbeddingCache,
}

#[derive(Clone, Copy, Default)]
pub struct Spaces<'a> {
    pub tfidf: Option<&'a TfidfModel>,
    pub embedding: Option<EmbeddingSpace<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub record_id: u64,
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// `None` marks an external (non-corpus) query.
    pub query_record_id: Option<u64>,
    pub chosen: Vec<Chosen>,
    pub method: Method,
    pub k_requested: usize,
    pub k_delivered: usize,
}

fn random_seed_for(global: u64, query: &Query<'_>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fewshot/random/v1");
    h.update(global.to_le_bytes());
    match query {
        Query::Record(r) => {
            h.update(b"id");
            h.update(r.record_id.to_le_bytes());
        }
        Query::Text(t) => {
            h.update(b"text");
            h.update(t.as_bytes());
        }
    }
    h.finalize().into()
}

fn check_rows(kind: &str, row_ids: &[u64], pool: &FewShotPool) -> Result<()> {
    if row_ids.len() != pool.len() || row_ids.iter().zip(&pool.candidates).any(|(a, b)| *a != b.record_id) {
        return Err(Error::Selection(format!(
            "{kind} space rows do not match the pool candidates ({} rows vs {} candidates)",
            row_ids.len(),
            pool.len()
        )));
    }
    Ok(())
}

/// Picks `cfg.k` demonstrations for `query` from `pool`.
pub fn select(
    pool: &FewShotPool,
    query: Query<'_>,
    cfg: &SelectionConfig,
    spaces: &Spaces<'_>,
) -> Result<SelectionResult> {
    let exclude = match query.record_id() {
        Some(id) if cfg.exclude_query_record && pool.contains(id) => Some(id),
        _ => None,
    };
    let chosen: Vec<Chosen> = if cfg.k == 0 {
        Vec::new()
    } else {
        match cfg.method {
            Method::Random => {
                let eligible: Vec<u64> = pool
                    .candidates
                    .iter()
                    .map(|c| c.record_id)
                    .filter(|id| Some(*id) != exclude)
                    .collect();
                let mut rng = ChaCha8Rng::from_seed(random_seed_for(cfg.seed, &query));
                let take = cfg.k.min(eligible.len());
                rand::seq::index::sample(&mut rng, eligible.len(), take)
                    .into_iter()
                    .map(|i| Chosen {
                        record_id: eligible[i],
                        similarity: None,
                    })
                    .collect()
            }
            Method::Tfidf => {
                let model = spaces
                    .tfidf
                    .ok_or_else(|| Error::Selection("tfidf selection needs a fitted TF-IDF space".into()))?;
                check_rows("tfidf", &model.row_ids, pool)?;
                let q = model.transform(query.text());
                to_chosen(knn_excluding(model, &q, cfg.k, exclude))
            }
            Method::Embedding => {
                let space = spaces
                    .embedding
                    .ok_or_else(|| Error::Selection("embedding selection needs an embedding space".into()))?;
                check_rows("embedding", &space.matrix.row_ids, pool)?;
                if space.provider.tag() != space.matrix.provider_tag {
                    return Err(Error::Selection(format!(
                        "query encoder {:?} differs from matrix encoder {:?}",
                        space.provider.tag(),
                        space.matrix.provider_tag
                    )));
                }
                let q = embed_cached(space.provider, space.cache, query.text())?;
                if q.len() != space.matrix.dim {
                    return Err(Error::Selection(format!(
                        "query embedding has dimension {}, space has {}",
                        q.len(),
                        space.matrix.dim
                    )));
                }
                to_chosen(knn_excluding(space.matrix, q.as_slice(), cfg.k, exclude))
            }
        }
    };
    Ok(SelectionResult {
        query_record_id: query.record_id(),
        k_delivered: chosen.len(),
        chosen,
        method: cfg.method,
        k_requested: cfg.k,
    })
}

fn to_chosen(neighbors: Vec<crate::vectorspace::Neighbor>) -> Vec<Chosen> {
    neighbors
        .into_iter()
        .map(|n| Chosen {
            record_id: n.record_id,
            similarity: Some(n.similarity),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySimilarity {
    pub query_record_id: Option<u64>,
    pub k_delivered: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub n_queries: usize,
    pub per_query: Vec<QuerySimilarity>,
    /// Chosen-example counts per class name, over all queries.
    pub class_distribution: BTreeMap<String, usize>,
    /// Fraction of queries whose chosen list also occurs for another query.
    pub duplicate_list_rate: f64,
    /// 1 - distinct chosen examples / total chosen slots.
    pub example_reuse_rate: f64,
}

pub fn selection_report(results: &[SelectionResult], pool: &FewShotPool, scheme: &LabelScheme) -> SelectionSummary {
    if results.is_empty() {
        return SelectionSummary::default();
    }
    let labels: HashMap<u64, LabelId> = pool.candidates.iter().map(|c| (c.record_id, c.label)).collect();
    let mut class_distribution = BTreeMap::new();
    let mut distinct = HashSet::new();
    let mut slots = 0usize;
    let mut list_counts: HashMap<Vec<u64>, usize> = HashMap::new();
    let per_query = results
        .iter()
        .map(|r| {
            let ids: Vec<u64> = r.chosen.iter().map(|c| c.record_id).collect();
            for id in &ids {
                if let Some(l) = labels.get(id) {
                    *class_distribution.entry(scheme.name_of(*l).to_string()).or_insert(0) += 1;
                }
                distinct.insert(*id);
            }
            slots += ids.len();
            *list_counts.entry(ids).or_insert(0) += 1;
            let sims: Vec<f64> = r.chosen.iter().filter_map(|c| c.similarity).collect();
            let (mean, min, max) = if sims.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(sims.iter().sum::<f64>() / sims.len() as f64),
                    sims.iter().copied().reduce(f64::min),
                    sims.iter().copied().reduce(f64::max),
                )
            };
            QuerySimilarity {
                query_record_id: r.query_record_id,
                k_delivered: r.k_delivered,
                mean,
                min,
                max,
            }
        })
        .collect();
    let duplicated: usize = list_counts.values().filter(|&&n| n > 1).sum();
    SelectionSummary {
        n_queries: results.len(),
        per_query,
        class_distribution,
        duplicate_list_rate: duplicated as f64 / results.len() as f64,
        example_reuse_rate: if slots == 0 {
            0.0
        } else {
            1.0 - distinct.len() as f64 / slots as f64
        },
    }
}

/// One JSON object per line, in input order.
pub fn write_selections_jsonl(results: &[SelectionResult], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for r in results {
        serde_json::to_writer(&mut buf, r)?;
        buf.write_all(b"\n").expect("write to vec");
    }
    crate::report::write_atomic(path, &buf)
}
