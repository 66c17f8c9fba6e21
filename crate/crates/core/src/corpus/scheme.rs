use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a label inside its [`LabelScheme`], in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u16);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl LabelDef {
    fn new(name: &str, description: &str, aliases: &[&str]) -> Self {
        LabelDef {
            name: name.to_string(),
            description: Some(description.to_string()),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeFile {
    name: String,
    task_kind: TaskKind,
    labels: Vec<LabelDef>,
}

/// Normalizes a label surface form: lowercase, every run of
/// non-alphanumeric characters collapsed to one space, trimmed.
///
/// `"Non-Functional"` and `"non functional"` normalize identically.
pub fn normalize_label_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// An ordered set of classes with canonical names and aliases.
///
/// Lookup is case-insensitive and punctuation-insensitive; canonical names
/// and aliases must be unique across the whole scheme after normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SchemeFile", into = "SchemeFile")]
pub struct LabelScheme {
    name: String,
    task_kind: TaskKind,
    labels: Vec<LabelDef>,
    lookup: HashMap<String, LabelId>,
}

impl TryFrom<SchemeFile> for LabelScheme {
    type Error = Error;

    fn try_from(f: SchemeFile) -> Result<Self> {
        LabelScheme::new(f.name, f.task_kind, f.labels)
    }
}

impl From<LabelScheme> for SchemeFile {
    fn from(s: LabelScheme) -> Self {
        SchemeFile {
            name: s.name,
            task_kind: s.task_kind,
            labels: s.labels,
        }
    }
}

impl PartialEq for LabelScheme {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.task_kind == other.task_kind && self.labels == other.labels
    }
}

pub const BUILTIN_SCHEMES: &[&str] = &["promise-binary", "promise-12", "promise-relabeled-9"];

impl LabelScheme {
    pub fn new(name: impl Into<String>, task_kind: TaskKind, labels: Vec<LabelDef>) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::Scheme(format!("{name}: no labels declared")));
        }
        if labels.len() > u16::MAX as usize {
            return Err(Error::Scheme(format!("{name}: too many labels")));
        }
        if task_kind == TaskKind::Binary && labels.len() != 2 {
            return Err(Error::Scheme(format!(
                "{name}: binary scheme must declare exactly 2 labels, found {}",
                labels.len()
            )));
        }
        let mut lookup = HashMap::new();
        for (i, def) in labels.iter().enumerate() {
            let id = LabelId(i as u16);
            for form in std::iter::once(&def.name).chain(def.aliases.iter()) {
                let key = normalize_label_text(form);
                if key.is_empty() {
                    return Err(Error::Scheme(format!(
                        "{name}: label {:?} has an empty name or alias",
                        def.name
                    )));
                }
                if let Some(prev) = lookup.insert(key.clone(), id) {
                    return Err(Error::Scheme(format!(
                        "{name}: {form:?} is ambiguous (normalizes to {key:?}, already used by {:?})",
                        labels[prev.index()].name
                    )));
                }
            }
        }
        Ok(LabelScheme {
            name,
            task_kind,
            labels,
            lookup,
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: SchemeFile = toml::from_str(s).map_err(|e| Error::Scheme(format!("parse error: {e}")))?;
        file.try_into()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let file: SchemeFile =
                    serde_json::from_str(&text).map_err(|e| Error::Scheme(format!("{}: {e}", path.display())))?;
                file.try_into()
            }
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&SchemeFile::from(self.clone())).expect("scheme serializes")
    }

    /// Resolves a builtin name, or failing that reads a scheme file at `spec`.
    pub fn resolve_spec(spec: &str) -> Result<Self> {
        match Self::builtin(spec) {
            Some(s) => Ok(s),
            None => {
                let p = Path::new(spec);
                if p.exists() {
                    Self::from_file(p)
                } else {
                    Err(Error::Scheme(format!(
                        "{spec:?} is neither a builtin scheme ({}) nor an existing file",
                        BUILTIN_SCHEMES.join(", ")
                    )))
                }
            }
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let scheme = match name {
            "promise-binary" => Self::new(name, TaskKind::Binary, binary_labels()),
            "promise-12" => Self::new(name, TaskKind::Multiclass, promise12_labels()),
            "promise-relabeled-9" => Self::new(name, TaskKind::Multiclass, relabeled9_labels()),
            _ => return None,
        };
        Some(scheme.expect("builtin schemes are valid"))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> + '_ {
        (0..self.labels.len()).map(|i| LabelId(i as u16))
    }

    pub fn labels(&self) -> &[LabelDef] {
        &self.labels
    }

    pub fn def(&self, id: LabelId) -> Option<&LabelDef> {
        self.labels.get(id.index())
    }

    /// Canonical name; panics on an id from another scheme.
    pub fn name_of(&self, id: LabelId) -> &str {
        &self.labels[id.index()].name
    }

    pub fn contains(&self, id: LabelId) -> bool {
        id.index() < self.labels.len()
    }

    pub fn resolve(&self, surface: &str) -> Option<LabelId> {
        self.lookup.get(&normalize_label_text(surface)).copied()
    }

    /// Every (normalized surface form, label) pair, canonical names included.
    pub fn surface_forms(&self) -> impl Iterator<Item = (&str, LabelId)> {
        self.lookup.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

const NFR_SUBCLASS_CODES: &[&str] = &["A", "FT", "L", "LF", "MN", "O", "PE", "PO", "SC", "SE", "US"];

fn binary_labels() -> Vec<LabelDef> {
    let mut nfr_aliases = vec!["non-functional", "nonfunctional", "non-functional requirement", "N"];
    nfr_aliases.extend_from_slice(NFR_SUBCLASS_CODES);
    vec![
        LabelDef::new(
            "FR",
            "functional requirement",
            &["F", "functional", "functional requirement"],
        ),
        LabelDef::new("NFR", "non-functional requirement", &nfr_aliases),
    ]
}

fn promise12_labels() -> Vec<LabelDef> {
    vec![
        LabelDef::new("FR", "functional", &["F", "functional"]),
        LabelDef::new("A", "availability", &["availability"]),
        LabelDef::new("FT", "fault tolerance", &["fault tolerance"]),
        LabelDef::new("L", "legal", &["legal"]),
        LabelDef::new("LF", "look and feel", &["look and feel", "look & feel"]),
        LabelDef::new("MN", "maintainability", &["maintainability"]),
        LabelDef::new("O", "operational", &["operational", "operability"]),
        LabelDef::new("PE", "performance", &["performance"]),
        LabelDef::new("PO", "portability", &["portability"]),
        LabelDef::new("SC", "scalability", &["scalability"]),
        LabelDef::new("SE", "security", &["security"]),
        LabelDef::new("US", "usability", &["usability"]),
    ]
}

fn relabeled9_labels() -> Vec<LabelDef> {
    vec![
        LabelDef::new(
            "FS",
            "functional suitability",
            &["functional suitability", "functional", "F", "FR"],
        ),
        LabelDef::new(
            "PE",
            "performance efficiency",
            &["performance efficiency", "performance"],
        ),
        LabelDef::new("CO", "compatibility", &["compatibility"]),
        LabelDef::new("IC", "interaction capability", &["interaction capability", "usability"]),
        LabelDef::new("RE", "reliability", &["reliability"]),
        LabelDef::new("SE", "security", &["security"]),
        LabelDef::new("MA", "maintainability", &["maintainability"]),
        LabelDef::new("FL", "flexibility", &["flexibility", "portability"]),
        LabelDef::new("SA", "safety", &["safety"]),
    ]
}
