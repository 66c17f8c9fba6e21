//! Offline chat backends with planted behaviour, for tests and dry runs.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AttemptError, ChatBackend, ModelProfile};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::prompt::PromptSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub shots: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "answer")]
pub enum MockKind {
    /// Answers with the query's gold label.
    EchoGold,
    /// Always answers `label`, verbatim.
    Constant { label: String },
    /// Accuracy as a step function of the shot count. Within each class
    /// (members ordered by record id) the first `round((1 - acc) * n_c)`
    /// queries get the next class name in scheme order, the rest are
    /// answered correctly. Shot counts between points use the nearest point
    /// below, or the first point.
    Schedule { points: Vec<SchedulePoint> },
}

#[derive(Debug, Clone)]
struct GoldEntry {
    label: usize,
    rank: usize,
    class_size: usize,
}

/// Gold answers for the records a mock may be asked about.
#[derive(Debug, Clone, Default)]
pub struct GoldBook {
    entries: Arc<HashMap<u64, GoldEntry>>,
    names: Arc<Vec<String>>,
}

impl GoldBook {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let scheme = corpus.scheme();
        let mut by_class: Vec<Vec<u64>> = vec![Vec::new(); scheme.len()];
        for r in corpus.records() {
            by_class[r.label.index()].push(r.record_id);
        }
        let mut entries = HashMap::new();
        for (label, ids) in by_class.iter_mut().enumerate() {
            ids.sort_unstable();
            for (rank, id) in ids.iter().enumerate() {
                entries.insert(
                    *id,
                    GoldEntry {
                        label,
                        rank,
                        class_size: ids.len(),
                    },
                );
            }
        }
        GoldBook {
            entries: Arc::new(entries),
            names: Arc::new(scheme.labels().iter().map(|d| d.name.clone()).collect()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct MockChat {
    kind: MockKind,
    gold: GoldBook,
}

impl MockChat {
    pub fn new(kind: MockKind, gold: GoldBook) -> Result<Self> {
        if let MockKind::Schedule { points } = &kind {
            if points.is_empty() {
                return Err(Error::Config("mock schedule needs at least one point".into()));
            }
            if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(&p.accuracy)) {
                return Err(Error::Config(format!("mock accuracy {} outside [0, 1]", p.accuracy)));
            }
        }
        Ok(MockChat { kind, gold })
    }

    fn entry(&self, prompt: &PromptSpec) -> std::result::Result<&GoldEntry, AttemptError> {
        prompt
            .query_record_id
            .and_then(|id| self.gold.entries.get(&id))
            .ok_or_else(|| {
                AttemptError::Fatal(Error::Config(format!(
                    "mock backend has no gold label for query {:?}",
                    prompt.query_record_id
                )))
            })
    }
}

fn accuracy_at(points: &[SchedulePoint], shots: usize) -> f64 {
    let mut sorted: Vec<&SchedulePoint> = points.iter().collect();
    sorted.sort_by_key(|p| p.shots);
    sorted
        .iter()
        .rev()
        .find(|p| p.shots <= shots)
        .unwrap_or(&sorted[0])
        .accuracy
}

impl ChatBackend for MockChat {
    fn send(&self, _: &ModelProfile, prompt: &PromptSpec) -> std::result::Result<String, AttemptError> {
        match &self.kind {
            MockKind::Constant { label } => Ok(label.clone()),
            MockKind::EchoGold => {
                let e = self.entry(prompt)?;
                Ok(self.gold.names[e.label].clone())
            }
            MockKind::Schedule { points } => {
                let e = self.entry(prompt)?;
                let acc = accuracy_at(points, prompt.shot_count);
                let wrong = ((1.0 - acc) * e.class_size as f64).round() as usize;
                let label = if e.rank < wrong {
                    (e.label + 1) % self.gold.names.len()
                } else {
                    e.label
                };
                Ok(self.gold.names[label].clone())
            }
        }
    }
}
