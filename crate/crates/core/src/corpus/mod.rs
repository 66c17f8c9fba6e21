//! Labeled requirement corpora: ingestion, label schemes and splits.

mod scheme;
mod split;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use scheme::{normalize_label_text, LabelDef, LabelId, LabelScheme, TaskKind, BUILTIN_SCHEMES};
pub use split::{make_split, SplitKind, SplitPlan, TEST, TRAIN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementRecord {
    pub record_id: u64,
    pub text: String,
    pub label: LabelId,
    pub dataset: String,
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSpec {
    pub text_column: String,
    pub label_column: String,
    /// Dataset name stamped on every record; defaults to the file stem.
    pub dataset: Option<String>,
}

impl Default for CsvSpec {
    fn default() -> Self {
        CsvSpec {
            text_column: "text".into(),
            label_column: "label".into(),
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<RequirementRecord>,
    scheme: LabelScheme,
    class_counts: BTreeMap<LabelId, usize>,
}

impl Corpus {
    pub fn new(records: Vec<RequirementRecord>, scheme: LabelScheme) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_counts = BTreeMap::new();
        for r in &records {
            if !seen.insert(r.record_id) {
                return Err(Error::Corpus(format!("duplicate record_id {}", r.record_id)));
            }
            if r.text.trim().is_empty() {
                return Err(Error::Corpus(format!("record {} has empty text", r.record_id)));
            }
            if !scheme.contains(r.label) {
                return Err(Error::Scheme(format!(
                    "record {} carries label {} outside scheme {:?}",
                    r.record_id,
                    r.label,
                    scheme.name()
                )));
            }
            *class_counts.entry(r.label).or_insert(0) += 1;
        }
        Ok(Corpus {
            records,
            scheme,
            class_counts,
        })
    }

    pub fn records(&self) -> &[RequirementRecord] {
        &self.records
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn class_counts(&self) -> &BTreeMap<LabelId, usize> {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: u64) -> Option<&RequirementRecord> {
        // ids are sequential for loaded corpora; fall back to a scan otherwise
        match self.records.get(record_id as usize) {
            Some(r) if r.record_id == record_id => Some(r),
            _ => self.records.iter().find(|r| r.record_id == record_id),
        }
    }

    /// Records assigned to `partition` by `plan`, in corpus order.
    pub fn partition(&self, plan: &SplitPlan, partition: usize) -> Vec<RequirementRecord> {
        self.records
            .iter()
            .filter(|r| plan.assignments.get(&r.record_id) == Some(&partition))
            .cloned()
            .collect()
    }

    /// Records assigned to any partition other than `partition`.
    pub fn complement(&self, plan: &SplitPlan, partition: usize) -> Vec<RequirementRecord> {
        self.records
            .iter()
            .filter(|r| matches!(plan.assignments.get(&r.record_id), Some(p) if *p != partition))
            .cloned()
            .collect()
    }

    /// SHA-256 over scheme name, then (id, label name, text) per record.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scheme.name().as_bytes());
        for r in &self.records {
            h.update([0u8]);
            h.update(r.record_id.to_le_bytes());
            h.update(self.scheme.name_of(r.label).as_bytes());
            h.update([0u8]);
            h.update(r.text.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Class distribution as (canonical name, count) in scheme order,
    /// including zero-count classes.
    pub fn distribution(&self) -> Vec<(String, usize)> {
        self.scheme
            .ids()
            .map(|id| {
                (
                    self.scheme.name_of(id).to_string(),
                    self.class_counts.get(&id).copied().unwrap_or(0),
                )
            })
            .collect()
    }
}

/// Reads a labeled CSV (RFC 4180, UTF-8, header row required).
///
/// Record ids are assigned sequentially in file order starting from 0.
/// Row numbers in errors count data rows from 1, header excluded.
pub fn load_corpus(path: &Path, spec: &CsvSpec, scheme: &LabelScheme) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(std::io::BufReader::new(file));

    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };

    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut names = HashSet::new();
    let mut text_idx = None;
    let mut label_idx = None;
    for (i, raw) in headers.iter().enumerate() {
        let col = raw.trim_start_matches('\u{feff}').trim();
        if !names.insert(col.to_string()) {
            return Err(Error::DuplicateHeader {
                path: path.to_path_buf(),
                column: col.to_string(),
            });
        }
        if col == spec.text_column {
            text_idx = Some(i);
        }
        if col == spec.label_column {
            label_idx = Some(i);
        }
    }
    let missing = |column: &str| Error::MissingColumn {
        path: path.to_path_buf(),
        column: column.to_string(),
    };
    let text_idx = text_idx.ok_or_else(|| missing(&spec.text_column))?;
    let label_idx = label_idx.ok_or_else(|| missing(&spec.label_column))?;

    let dataset = spec.dataset.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(csv_err)?;
        let text = row.get(text_idx).unwrap_or("").trim();
        if text.is_empty() {
            return Err(Error::EmptyText {
                path: path.to_path_buf(),
                row: row_no,
            });
        }
        let raw_label = row.get(label_idx).unwrap_or("").trim();
        let label = scheme.resolve(raw_label).ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            row: row_no,
            value: raw_label.to_string(),
            scheme: scheme.name().to_string(),
        })?;
        records.push(RequirementRecord {
            record_id: records.len() as u64,
            text: text.to_string(),
            label,
            dataset: dataset.clone(),
        });
    }
    Corpus::new(records, scheme.clone())
}
