use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, LabelId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Partition 0 is train, partition 1 is test.
    Holdout { train_fraction: f64 },
    /// Partitions 0..k are folds.
    Kfold { k: usize },
}

impl SplitKind {
    pub fn partitions(&self) -> usize {
        match self {
            SplitKind::Holdout { .. } => 2,
            SplitKind::Kfold { k } => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub assignments: BTreeMap<u64, usize>,
}

pub const TRAIN: usize = 0;
pub const TEST: usize = 1;

impl SplitPlan {
    pub fn partition_count(&self) -> usize {
        self.kind.partitions()
    }

    pub fn partition_ids(&self, partition: usize) -> Vec<u64> {
        self.assignments
            .iter()
            .filter(|(_, p)| **p == partition)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn partition_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.partition_count()];
        for p in self.assignments.values() {
            sizes[*p] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_json().as_bytes())
    }
}

/// Shuffled record ids per class, in scheme order. Classes with no records
/// are omitted.
fn shuffled_by_class(corpus: &Corpus, seed: u64) -> Vec<(LabelId, Vec<u64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .scheme()
        .ids()
        .filter_map(|label| {
            let mut ids: Vec<u64> = corpus
                .records()
                .iter()
                .filter(|r| r.label == label)
                .map(|r| r.record_id)
                .collect();
            if ids.is_empty() {
                return None;
            }
            ids.shuffle(&mut rng);
            Some((label, ids))
        })
        .collect()
}

/// Builds a class-stratified, seeded split.
///
/// Holdout puts `round(fraction * n_c)` records of each class in train.
/// K-fold walks the per-class shuffled lists back to back and deals records
/// to folds round-robin, so both fold sizes and per-class fold counts differ
/// by at most one.
pub fn make_split(corpus: &Corpus, kind: SplitKind, seed: u64) -> Result<SplitPlan> {
    if corpus.is_empty() {
        return Err(Error::Split("corpus is empty".into()));
    }
    let groups = shuffled_by_class(corpus, seed);
    let mut assignments = BTreeMap::new();
    match kind {
        SplitKind::Holdout { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::Split(format!(
                    "train fraction must lie strictly between 0 and 1, got {train_fraction}"
                )));
            }
            for (_, ids) in &groups {
                let n_train = (train_fraction * ids.len() as f64).round() as usize;
                for (i, id) in ids.iter().enumerate() {
                    assignments.insert(*id, if i < n_train { TRAIN } else { TEST });
                }
            }
        }
        SplitKind::Kfold { k } => {
            if k < 2 || k > corpus.len() {
                return Err(Error::Split(format!(
                    "fold count must satisfy 2 <= k <= {}, got {k}",
                    corpus.len()
                )));
            }
            let short: Vec<String> = groups
                .iter()
                .filter(|(_, ids)| ids.len() < k)
                .map(|(label, ids)| format!("{} ({})", corpus.scheme().name_of(*label), ids.len()))
                .collect();
            if !short.is_empty() {
                return Err(Error::Split(format!(
                    "classes with fewer than {k} records cannot be stratified into {k} folds: {}",
                    short.join(", ")
                )));
            }
            let mut position = 0usize;
            for (_, ids) in &groups {
                for id in ids {
                    assignments.insert(*id, position % k);
                    position += 1;
                }
            }
        }
    }
    Ok(SplitPlan {
        kind,
        seed,
        assignments,
    })
}
