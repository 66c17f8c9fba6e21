use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{cosine_from_parts, tokenize, CosineSpace};
use crate::corpus::RequirementRecord;

/// Sparse vector as (column, weight) pairs with strictly increasing columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec(pub Vec<(u32, f64)>);

impl SparseVec {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|(_, w)| *w == 0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|(_, w)| w * w).sum()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn get(&self, col: u32) -> f64 {
        self.0
            .binary_search_by_key(&col, |(c, _)| *c)
            .map(|i| self.0[i].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (c, w) in &self.0 {
            out[*c as usize] = *w;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_sorted(terms: Vec<String>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { terms, index }
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn column(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }
}

/// TF-IDF space fitted over a candidate pool.
///
/// Weighting: raw term count times `ln((1 + N) / (1 + df)) + 1`, rows L2
/// normalized. Terms are sorted lexicographically to fix column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfidfWire", into = "TfidfWire")]
pub struct TfidfModel {
    pub vocabulary: Vocabulary,
    pub idf: Vec<f64>,
    pub doc_matrix: Vec<SparseVec>,
    pub row_ids: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct TfidfWire {
    terms: Vec<String>,
    idf: Vec<f64>,
    doc_matrix: Vec<SparseVec>,
    row_ids: Vec<u64>,
}

impl From<TfidfWire> for TfidfModel {
    fn from(w: TfidfWire) -> Self {
        let mut vocabulary = Vocabulary {
            terms: w.terms,
            index: HashMap::new(),
        };
        vocabulary.rebuild_index();
        TfidfModel {
            vocabulary,
            idf: w.idf,
            doc_matrix: w.doc_matrix,
            row_ids: w.row_ids,
        }
    }
}

impl From<TfidfModel> for TfidfWire {
    fn from(m: TfidfModel) -> Self {
        TfidfWire {
            terms: m.vocabulary.terms,
            idf: m.idf,
            doc_matrix: m.doc_matrix,
            row_ids: m.row_ids,
        }
    }
}

impl TfidfModel {
    pub fn n_docs(&self) -> usize {
        self.row_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    /// Weighted, L2-normalized vector for `text` in this space; tokens
    /// outside the vocabulary are dropped.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(col) = self.vocabulary.column(&tok) {
                *counts.entry(col).or_insert(0.0) += 1.0;
            }
        }
        let mut v: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(col, tf)| (col, tf * self.idf[col as usize]))
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        SparseVec(v)
    }
}

impl CosineSpace for TfidfModel {
    type Query = SparseVec;

    fn rows(&self) -> usize {
        self.doc_matrix.len()
    }

    fn row_id(&self, row: usize) -> u64 {
        self.row_ids[row]
    }

    fn cosine(&self, row: usize, query: &SparseVec) -> f64 {
        let r = &self.doc_matrix[row];
        cosine_from_parts(r.dot(query), r.norm_sq(), query.norm_sq()).max(0.0)
    }
}

pub fn fit_tfidf(candidates: &[RequirementRecord]) -> TfidfModel {
    let docs: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(&c.text)).collect();
    let terms: BTreeSet<&String> = docs.iter().flatten().collect();
    let vocabulary = Vocabulary::from_sorted(terms.into_iter().cloned().collect());

    let mut df = vec![0usize; vocabulary.len()];
    for doc in &docs {
        let uniq: BTreeSet<u32> = doc.iter().filter_map(|t| vocabulary.column(t)).collect();
        for col in uniq {
            df[col as usize] += 1;
        }
    }
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();

    let mut model = TfidfModel {
        vocabulary,
        idf,
        doc_matrix: Vec::with_capacity(candidates.len()),
        row_ids: candidates.iter().map(|c| c.record_id).collect(),
    };
    model.doc_matrix = candidates.iter().map(|c| model.transform(&c.text)).collect();
    model
}

pub fn embed_query_tfidf(model: &TfidfModel, text: &str) -> SparseVec {
    model.transform(text)
}
