//! Python module `fewshot`: corpora, splits, pools, demonstration selection,
//! prompt rendering, label parsing, metrics and shot-count sweeps.
//!
//! Structured results cross the boundary as plain dicts and lists (through
//! JSON), so they match the files the CLI writes.

use std::path::PathBuf;

use fewshot_core::config::{RunConfig, Session};
use fewshot_core::corpus::{
    load_corpus, make_split, Corpus, CsvSpec, LabelId, LabelScheme, RequirementRecord, SplitKind, SplitPlan,
};
use fewshot_core::eval::{compute_report, prepare, score_prediction, Prediction, RunMeta, ScoringPolicy};
use fewshot_core::gateway::parse_label as core_parse_label;
use fewshot_core::prompt::{render_prompt, OrderingPolicy, PromptTemplate};
use fewshot_core::selection::{
    build_pool, select, EmbeddingSpace, FewShotPool, Method, Query, SelectionConfig, Spaces,
};
use fewshot_core::sweep::{self, run_sweep, CurvePoint, SweepSettings};
use fewshot_core::vectorspace::{
    build_embedding_matrix, fit_tfidf, EmbeddingCache, EmbeddingMatrix, HashEmbedder, TfidfModel,
};
use fewshot_core::{Error, ErrorCategory};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(fewshot, FewshotError, PyException);
create_exception!(fewshot, ConfigError, FewshotError);
create_exception!(fewshot, DataError, FewshotError);
create_exception!(fewshot, TransportError, FewshotError);

fn to_py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Config => ConfigError::new_err(msg),
        ErrorCategory::Data => DataError::new_err(msg),
        ErrorCategory::Transport => TransportError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for fewshot_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FewshotError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config_err(msg: String) -> PyErr {
    ConfigError::new_err(msg)
}

fn parse_method(s: &str) -> PyResult<Method> {
    s.parse::<Method>().map_err(to_py_err)
}

fn parse_ordering(s: &str) -> PyResult<OrderingPolicy> {
    s.parse::<OrderingPolicy>().map_err(to_py_err)
}

fn parse_policy(s: &str) -> PyResult<ScoringPolicy> {
    s.parse::<ScoringPolicy>().map_err(to_py_err)
}

/// A label scheme: built-in name (`promise-binary`, `promise-12`,
/// `promise-relabeled-9`) or a scheme TOML file.
#[pyclass(name = "Scheme", module = "fewshot", frozen)]
pub struct PyScheme {
    inner: LabelScheme,
}

#[pymethods]
impl PyScheme {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(PyScheme {
            inner: LabelScheme::resolve_spec(spec).py()?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScheme {
            inner: LabelScheme::from_toml_str(text).py()?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().iter().map(|d| d.name.clone()).collect()
    }

    /// Canonical class name for a surface form or alias.
    fn resolve(&self, surface: &str) -> Option<String> {
        self.inner.resolve(surface).map(|id| self.inner.name_of(id).to_string())
    }

    /// Parses a completion into a dict with `outcome` and `label`/`labels`.
    fn parse<'py>(&self, py: Python<'py>, completion: &str) -> PyResult<Bound<'py, PyAny>> {
        parse_label(py, completion, self)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Scheme({:?}, {} classes)", self.inner.name(), self.inner.len())
    }
}

#[pyclass(name = "SplitPlan", module = "fewshot", frozen)]
pub struct PySplitPlan {
    inner: SplitPlan,
}

#[pymethods]
impl PySplitPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySplitPlan {
            inner: SplitPlan::from_json(text).py()?,
        })
    }

    #[getter]
    fn partition_count(&self) -> usize {
        self.inner.partition_count()
    }

    /// Record ids in test partition `i` (the holdout test side is 0).
    fn partition_ids(&self, i: usize) -> PyResult<Vec<u64>> {
        if i >= self.inner.partition_count() {
            return Err(config_err(format!(
                "partition {i} out of range ({} partitions)",
                self.inner.partition_count()
            )));
        }
        Ok(self.inner.partition_ids(i))
    }

    fn partition_sizes(&self) -> Vec<usize> {
        self.inner.partition_sizes()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

#[pyclass(name = "Corpus", module = "fewshot", frozen)]
pub struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (path, scheme, text_column = "text", label_column = "label"))]
    fn load(path: PathBuf, scheme: &PyScheme, text_column: &str, label_column: &str) -> PyResult<Self> {
        let spec = CsvSpec {
            text_column: text_column.into(),
            label_column: label_column.into(),
            dataset: None,
        };
        Ok(PyCorpus {
            inner: load_corpus(&path, &spec, &scheme.inner).py()?,
        })
    }

    /// Builds a corpus from `(text, label)` pairs; ids follow list order.
    #[staticmethod]
    #[pyo3(signature = (rows, scheme, dataset = "inline"))]
    fn from_rows(rows: Vec<(String, String)>, scheme: &PyScheme, dataset: &str) -> PyResult<Self> {
        let mut records = Vec::with_capacity(rows.len());
        for (i, (text, label)) in rows.into_iter().enumerate() {
            let id = scheme
                .inner
                .resolve(&label)
                .ok_or_else(|| DataError::new_err(format!("row {i}: label {label:?} is not in the scheme")))?;
            records.push(RequirementRecord {
                record_id: i as u64,
                text,
                label: id,
                dataset: dataset.into(),
            });
        }
        Ok(PyCorpus {
            inner: Corpus::new(records, scheme.inner.clone()).py()?,
        })
    }

    #[getter]
    fn scheme(&self) -> PyScheme {
        PyScheme {
            inner: self.inner.scheme().clone(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `[(class, count), ...]` in scheme order.
    fn distribution(&self) -> Vec<(String, usize)> {
        self.inner.distribution()
    }

    /// `[(record_id, text, label), ...]`
    fn records(&self) -> Vec<(u64, String, String)> {
        let scheme = self.inner.scheme();
        self.inner
            .records()
            .iter()
            .map(|r| (r.record_id, r.text.clone(), scheme.name_of(r.label).to_string()))
            .collect()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// `kind` is `holdout` or `kfold`.
    #[pyo3(signature = (kind = "kfold", folds = 10, train_fraction = 0.8, seed = 42))]
    fn split(&self, kind: &str, folds: usize, train_fraction: f64, seed: u64) -> PyResult<PySplitPlan> {
        let kind = match kind {
            "holdout" => SplitKind::Holdout { train_fraction },
            "kfold" => SplitKind::Kfold { k: folds },
            other => return Err(config_err(format!("unknown split kind {other:?}"))),
        };
        Ok(PySplitPlan {
            inner: make_split(&self.inner, kind, seed).py()?,
        })
    }

    /// Pool from the training side of `partition` of `plan`, or from the
    /// whole corpus without a plan. `size=None` takes every record.
    #[pyo3(signature = (size = None, seed = 7, plan = None, partition = 0, embedding_dim = 256))]
    fn build_pool(
        &self,
        size: Option<usize>,
        seed: u64,
        plan: Option<&PySplitPlan>,
        partition: usize,
        embedding_dim: usize,
    ) -> PyResult<PyPool> {
        let (train, source) = match plan {
            Some(p) => {
                if partition >= p.inner.partition_count() {
                    return Err(config_err(format!("partition {partition} out of range")));
                }
                (self.inner.complement(&p.inner, partition), format!("train:{partition}"))
            }
            None => (self.inner.records().to_vec(), "all".to_string()),
        };
        let size = size.unwrap_or(train.len());
        let pool = build_pool(&train, size, seed, source).py()?;
        PyPool::index(pool, self.inner.clone(), embedding_dim)
    }
}

/// A few-shot pool with its TF-IDF and embedding indexes.
#[pyclass(name = "Pool", module = "fewshot", frozen)]
pub struct PyPool {
    pool: FewShotPool,
    corpus: Corpus,
    tfidf: TfidfModel,
    embedder: HashEmbedder,
    cache: EmbeddingCache,
    matrix: EmbeddingMatrix,
}

impl PyPool {
    fn index(pool: FewShotPool, corpus: Corpus, dim: usize) -> PyResult<Self> {
        let tfidf = fit_tfidf(&pool.candidates);
        let embedder = HashEmbedder::new(dim);
        let cache = EmbeddingCache::in_memory();
        let matrix = build_embedding_matrix(&pool.candidates, &embedder, &cache, 64, 1).py()?;
        Ok(PyPool {
            pool,
            corpus,
            tfidf,
            embedder,
            cache,
            matrix,
        })
    }

    fn run_select(
        &self,
        query: Option<&str>,
        record_id: Option<u64>,
        method: &str,
        k: usize,
        seed: u64,
    ) -> PyResult<(fewshot_core::selection::SelectionResult, String)> {
        let record;
        let q = match (query, record_id) {
            (_, Some(id)) => {
                record = self
                    .corpus
                    .get(id)
                    .ok_or_else(|| DataError::new_err(format!("no record with id {id}")))?;
                Query::Record(record)
            }
            (Some(t), None) => Query::Text(t),
            (None, None) => return Err(config_err("pass a query text or a record_id".into())),
        };
        let text = q.text().to_string();
        let mut cfg = SelectionConfig::new(parse_method(method)?, k);
        cfg.seed = seed;
        let spaces = Spaces {
            tfidf: Some(&self.tfidf),
            embedding: Some(EmbeddingSpace {
                matrix: &self.matrix,
                provider: &self.embedder,
                cache: &self.cache,
            }),
        };
        Ok((select(&self.pool, q, &cfg, &spaces).py()?, text))
    }
}

#[pymethods]
impl PyPool {
    fn __len__(&self) -> usize {
        self.pool.len()
    }

    fn ids(&self) -> Vec<u64> {
        self.pool.ids()
    }

    /// `[(class, count), ...]` in scheme order.
    fn class_counts(&self) -> Vec<(String, usize)> {
        let scheme = self.corpus.scheme();
        self.pool
            .class_counts()
            .into_iter()
            .map(|(id, n)| (scheme.name_of(id).to_string(), n))
            .collect()
    }

    /// `[(record_id, similarity or None), ...]`, most similar first for the
    /// similarity methods.
    #[pyo3(signature = (query = None, *, record_id = None, method = "tfidf", k = 10, seed = 11))]
    fn select(
        &self,
        query: Option<&str>,
        record_id: Option<u64>,
        method: &str,
        k: usize,
        seed: u64,
    ) -> PyResult<Vec<(u64, Option<f64>)>> {
        let (sel, _) = self.run_select(query, record_id, method, k, seed)?;
        Ok(sel.chosen.iter().map(|c| (c.record_id, c.similarity)).collect())
    }

    /// Selects demonstrations and renders the chat prompt as a dict.
    #[pyo3(signature = (query = None, *, record_id = None, method = "tfidf", k = 10, seed = 11, ordering = "ascending"))]
    #[allow(clippy::too_many_arguments)]
    fn prompt<'py>(
        &self,
        py: Python<'py>,
        query: Option<&str>,
        record_id: Option<u64>,
        method: &str,
        k: usize,
        seed: u64,
        ordering: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (sel, text) = self.run_select(query, record_id, method, k, seed)?;
        let scheme = self.corpus.scheme();
        let template = PromptTemplate::default_for(scheme);
        let spec = render_prompt(&template, scheme, &sel, &self.pool, &text, parse_ordering(ordering)?).py()?;
        to_py(py, &spec)
    }
}

#[pyfunction]
fn parse_label<'py>(py: Python<'py>, completion: &str, scheme: &PyScheme) -> PyResult<Bound<'py, PyAny>> {
    let parsed = core_parse_label(completion, &scheme.inner);
    let value = match &parsed.outcome {
        fewshot_core::gateway::ParseOutcome::Label(id) => {
            serde_json::json!({"outcome": "label", "label": scheme.inner.name_of(*id)})
        }
        fewshot_core::gateway::ParseOutcome::MultiLabel(ids) => serde_json::json!({
            "outcome": "multi_label",
            "labels": ids.iter().map(|id| scheme.inner.name_of(*id)).collect::<Vec<_>>(),
        }),
        fewshot_core::gateway::ParseOutcome::Unparseable => serde_json::json!({"outcome": "unparseable"}),
    };
    to_py(py, &value)
}

/// Scores raw completions against gold labels and returns the metrics
/// report as a dict.
#[pyfunction]
#[pyo3(signature = (scheme, gold, completions, policy = "strict"))]
fn evaluate<'py>(
    py: Python<'py>,
    scheme: &PyScheme,
    gold: Vec<String>,
    completions: Vec<String>,
    policy: &str,
) -> PyResult<Bound<'py, PyAny>> {
    if gold.len() != completions.len() {
        return Err(config_err(format!(
            "{} gold labels but {} completions",
            gold.len(),
            completions.len()
        )));
    }
    let policy = parse_policy(policy)?;
    let mut preds = Vec::with_capacity(gold.len());
    for (i, (g, c)) in gold.iter().zip(&completions).enumerate() {
        let gold_id: LabelId = scheme
            .inner
            .resolve(g)
            .ok_or_else(|| DataError::new_err(format!("gold label {g:?} at {i} is not in the scheme")))?;
        let parsed = core_parse_label(c, &scheme.inner);
        preds.push(Prediction {
            record_id: i as u64,
            gold: gold_id,
            scored_as: score_prediction(&parsed, policy),
            parsed,
            prompt_hash: String::new(),
        });
    }
    let meta = RunMeta {
        scheme: scheme.inner.name().to_string(),
        policy,
        ..RunMeta::default()
    };
    let report = compute_report(&preds, &scheme.inner, meta).py()?;
    to_py(py, &report)
}

fn points_of(points: Vec<(usize, f64)>) -> Vec<CurvePoint> {
    points
        .into_iter()
        .map(|(shots, weighted_f1)| CurvePoint {
            shots,
            weighted_f1,
            macro_f1: 0.0,
            n_invalid: 0,
        })
        .collect()
}

/// Shot count with the highest weighted F1 among `[(shots, f1), ...]`;
/// ties go to the fewest shots.
#[pyfunction]
fn find_optimum(points: Vec<(usize, f64)>) -> Option<usize> {
    sweep::find_optimum(&points_of(points))
}

#[pyfunction]
#[pyo3(signature = (points, threshold = 0.02))]
fn detect_overprompting<'py>(
    py: Python<'py>,
    points: Vec<(usize, f64)>,
    threshold: f64,
) -> PyResult<Option<Bound<'py, PyAny>>> {
    sweep::detect_overprompting(&points_of(points), threshold)
        .map(|v| to_py(py, &v))
        .transpose()
}

/// Runs the sweep described by a run-config TOML string with an in-memory
/// response cache. Returns `{"curves": [...], "failures": [...]}`.
#[pyfunction]
fn run_sweep_config<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = RunConfig::from_toml_str(config_toml).py()?;
    let session = Session::open(config, None).py()?;
    let plan = session.split().py()?;
    let prepared = prepare(
        &session.corpus,
        &plan,
        session.pool_spec(),
        Some((session.embedder.as_ref(), &session.gateway)),
    )
    .py()?;
    let models = session.chat_models().py()?;
    let cfg = &session.config;
    let settings = SweepSettings {
        grid: &cfg.selection.grid,
        methods: &cfg.selection.methods,
        threshold: cfg.sweep.threshold,
        pool_seed: cfg.pool.seed,
        selection_seed: cfg.selection.seed,
        ordering: cfg.ordering().py()?,
        template: &session.template,
        policy: cfg.scoring.policy,
        concurrency: cfg.run.concurrency,
    };
    let out = run_sweep(
        &session.corpus,
        &plan,
        &prepared,
        &models,
        &settings,
        &session.runtime(),
    )
    .py()?;
    let failures: Vec<_> = out
        .cells
        .iter()
        .filter_map(|c| {
            c.error
                .as_ref()
                .map(|e| serde_json::json!({"model": c.model, "method": c.method, "shots": c.shots, "error": e}))
        })
        .collect();
    to_py(py, &serde_json::json!({"curves": out.curves, "failures": failures}))
}

#[pymodule]
pub fn fewshot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FewshotError", m.py().get_type::<FewshotError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("TransportError", m.py().get_type::<TransportError>())?;
    m.add_class::<PyScheme>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PySplitPlan>()?;
    m.add_class::<PyPool>()?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(find_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(detect_overprompting, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep_config, m)?)?;
    Ok(())
}
