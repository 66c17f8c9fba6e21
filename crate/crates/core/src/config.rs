//! Declarative run configuration (TOML) and the session it opens.
//!
//! ```toml
//! [dataset]
//! path = "data/promise_synthetic.csv"
//! scheme = "promise-binary"
//!
//! [split]
//! kind = "kfold"
//! folds = 10
//!
//! [selection]
//! methods = ["random", "embedding", "tfidf"]
//! grid = [0, 5, 10, 20]
//!
//! [run]
//! models = ["echo"]
//!
//! [[models]]
//! name = "echo"
//! kind = "chat"
//! backend = { type = "mock", answer = "echo_gold" }
//! ```
//!
//! Every section is optional except `[dataset]`; unknown keys are rejected.
//! Credentials never appear here: an HTTP profile names the environment
//! variable holding its key.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, make_split, Corpus, CsvSpec, LabelScheme, SplitKind, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{PoolSpec, Runtime, ScoringPolicy};
use crate::gateway::{
    chat_backend, embedding_provider, ChatModel, EndpointKind, Gateway, GoldBook, ModelProfile, RetryPolicy,
};
use crate::prompt::{OrderingPolicy, PromptTemplate};
use crate::selection::Method;
use crate::sweep::{validate_grid, DEFAULT_GRID, DEFAULT_THRESHOLD};
use crate::vectorspace::{EmbeddingProvider, HashEmbedder};

/// Dimension of the built-in hashing encoder used when no embedding model is
/// configured.
pub const DEFAULT_HASH_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Built-in scheme name or path to a scheme file.
    pub scheme: String,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default)]
    pub name: Option<String>,
}

fn default_text_column() -> String {
    "text".into()
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKindName {
    Holdout,
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub kind: SplitKindName,
    pub train_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            kind: SplitKindName::Holdout,
            train_fraction: 0.8,
            folds: 10,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn kind(&self) -> SplitKind {
        match self.kind {
            SplitKindName::Holdout => SplitKind::Holdout {
                train_fraction: self.train_fraction,
            },
            SplitKindName::Kfold => SplitKind::Kfold { k: self.folds },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Candidates per pool; the whole training side when absent.
    pub size: Option<usize>,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { size: None, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// Method for single runs.
    pub method: Method,
    /// Methods for sweeps.
    pub methods: Vec<Method>,
    /// Shot count for single runs and cross-validation.
    pub shots: usize,
    pub grid: Vec<usize>,
    pub seed: u64,
    /// `ascending`, `descending`, `pool-order` or `shuffle:<seed>`.
    pub ordering: String,
    /// Name of an embedding profile; the built-in hashing encoder otherwise.
    pub embedding_model: Option<String>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            method: Method::Tfidf,
            methods: Method::ALL.to_vec(),
            shots: 10,
            grid: DEFAULT_GRID.to_vec(),
            seed: 11,
            ordering: "ascending".into(),
            embedding_model: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Template file; the scheme's stock template otherwise.
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub policy: ScoringPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub threshold: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Chat profiles to run; every chat profile when empty.
    pub models: Vec<String>,
    pub concurrency: usize,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            models: Vec::new(),
            concurrency: 4,
            out_dir: PathBuf::from("runs"),
            cache_dir: PathBuf::from(".fewshot-cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub scoring: ScoringSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub models: Vec<ModelProfile>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn ordering(&self) -> Result<OrderingPolicy> {
        self.selection.ordering.parse()
    }

    pub fn scheme(&self) -> Result<LabelScheme> {
        LabelScheme::resolve_spec(&self.dataset.scheme)
    }

    pub fn profile(&self, name: &str) -> Option<&ModelProfile> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Names of the chat profiles a run uses.
    pub fn run_models(&self) -> Vec<String> {
        if self.run.models.is_empty() {
            self.models
                .iter()
                .filter(|m| m.kind == EndpointKind::Chat)
                .map(|m| m.name.clone())
                .collect()
        } else {
            self.run.models.clone()
        }
    }

    /// Checks everything that can be checked without reading the dataset or
    /// contacting a model.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err(Error::Config("dataset.path is empty".into()));
        }
        self.scheme()?;
        match self.split.kind {
            SplitKindName::Holdout => {
                let f = self.split.train_fraction;
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Config(format!(
                        "split.train_fraction must be in (0, 1), got {f}"
                    )));
                }
            }
            SplitKindName::Kfold => {
                if self.split.folds < 2 {
                    return Err(Error::Config(format!(
                        "split.folds must be at least 2, got {}",
                        self.split.folds
                    )));
                }
            }
        }
        validate_grid(&self.selection.grid)?;
        if self.selection.methods.is_empty() {
            return Err(Error::Config("selection.methods is empty".into()));
        }
        let distinct: BTreeSet<&Method> = self.selection.methods.iter().collect();
        if distinct.len() != self.selection.methods.len() {
            return Err(Error::Config("selection.methods lists a method twice".into()));
        }
        self.ordering()?;
        if self.sweep.threshold.is_nan() || self.sweep.threshold < 0.0 {
            return Err(Error::Config("sweep.threshold must be non-negative".into()));
        }
        if self.run.concurrency == 0 {
            return Err(Error::Config("run.concurrency must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("retry.max_attempts must be at least 1".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            m.validate()?;
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("model profile {:?} defined twice", m.name)));
            }
        }
        for name in self.run_models() {
            match self.profile(&name) {
                Some(p) if p.kind == EndpointKind::Chat => {}
                Some(_) => return Err(Error::Config(format!("run.models: {name:?} is not a chat profile"))),
                None => return Err(Error::Config(format!("run.models: no profile named {name:?}"))),
            }
        }
        if let Some(e) = &self.selection.embedding_model {
            match self.profile(e) {
                Some(p) if p.kind == EndpointKind::Embedding => {}
                _ => {
                    return Err(Error::Config(format!(
                        "selection.embedding_model: no embedding profile named {e:?}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// The configuration as JSON, the input of the manifest digest.
    pub fn semantic_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// A validated configuration with its corpus, template, gateway and
/// encoders loaded.
pub struct Session {
    pub config: RunConfig,
    pub corpus: Corpus,
    pub template: PromptTemplate,
    pub gateway: Arc<Gateway>,
    pub gold: GoldBook,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Session {
    /// Validates `config`, loads the dataset and opens the response cache
    /// (`None` keeps it in memory).
    pub fn open(config: RunConfig, cache_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let scheme = config.scheme()?;
        let spec = CsvSpec {
            text_column: config.dataset.text_column.clone(),
            label_column: config.dataset.label_column.clone(),
            dataset: config.dataset.name.clone(),
        };
        let corpus = load_corpus(&config.dataset.path, &spec, &scheme)?;
        let template = match &config.prompt.template {
            Some(p) => PromptTemplate::from_file(p)?,
            None => PromptTemplate::default_for(&scheme),
        };
        let gateway = Arc::new(match cache_dir {
            Some(dir) => Gateway::open(dir, config.retry)?,
            None => Gateway::in_memory(config.retry),
        });
        let embedder: Arc<dyn EmbeddingProvider> = match &config.selection.embedding_model {
            Some(name) => embedding_provider(config.profile(name).expect("validated"), &gateway)?,
            None => Arc::new(HashEmbedder::new(DEFAULT_HASH_DIM)),
        };
        Ok(Session {
            gold: GoldBook::from_corpus(&corpus),
            config,
            corpus,
            template,
            gateway,
            embedder,
        })
    }

    pub fn split(&self) -> Result<SplitPlan> {
        make_split(&self.corpus, self.config.split.kind(), self.config.split.seed)
    }

    pub fn pool_spec(&self) -> PoolSpec {
        PoolSpec {
            size: self.config.pool.size,
            seed: self.config.pool.seed,
        }
    }

    pub fn chat_model(&self, name: &str) -> Result<ChatModel> {
        let profile = self
            .config
            .profile(name)
            .ok_or_else(|| Error::Config(format!("no model profile named {name:?}")))?
            .clone();
        let backend = chat_backend(&profile, &self.gold)?;
        Ok(ChatModel { profile, backend })
    }

    pub fn chat_models(&self) -> Result<Vec<ChatModel>> {
        self.config.run_models().iter().map(|n| self.chat_model(n)).collect()
    }

    pub fn runtime(&self) -> Runtime<'_> {
        Runtime {
            gateway: &self.gateway,
            embedder: Some(self.embedder.as_ref()),
        }
    }
}
