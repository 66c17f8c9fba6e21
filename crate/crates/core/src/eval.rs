//! Scoring and evaluation runs.
//!
//! A run walks every test record through select → render → complete →
//! parse → score. Completions go through the gateway cache, so a run that
//! aborts midway resumes from where it stopped when repeated.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelId, LabelScheme, RequirementRecord, SplitKind, SplitPlan, TEST, TRAIN};
use crate::error::{Error, Result};
use crate::gateway::{parse_label, ChatModel, Gateway, ParseOutcome, ParsedLabel};
use crate::prompt::{render_prompt, OrderingPolicy, PromptTemplate};
use crate::selection::{build_pool, select, EmbeddingSpace, FewShotPool, Method, Query, SelectionConfig, Spaces};
use crate::vectorspace::{build_embedding_matrix, fit_tfidf, EmbeddingMatrix, EmbeddingProvider, TfidfModel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringPolicy {
    /// Only single-label answers score.
    #[default]
    Strict,
    /// A multi-label answer scores as its first label.
    FirstMatch,
}

impl fmt::Display for ScoringPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringPolicy::Strict => "strict",
            ScoringPolicy::FirstMatch => "first_match",
        })
    }
}

impl FromStr for ScoringPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "strict" => Ok(ScoringPolicy::Strict),
            "first_match" => Ok(ScoringPolicy::FirstMatch),
            other => Err(Error::Config(format!(
                "unknown scoring policy {other:?} (expected strict or first_match)"
            ))),
        }
    }
}

pub fn score_prediction(parsed: &ParsedLabel, policy: ScoringPolicy) -> Option<LabelId> {
    match (&parsed.outcome, policy) {
        (ParseOutcome::Label(l), _) => Some(*l),
        (ParseOutcome::MultiLabel(ls), ScoringPolicy::FirstMatch) => ls.first().copied(),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: u64,
    pub gold: LabelId,
    pub parsed: ParsedLabel,
    pub scored_as: Option<LabelId>,
    pub prompt_hash: String,
}

/// Identifies what produced a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: String,
    pub method: String,
    pub shots: usize,
    pub split: String,
    pub split_seed: u64,
    pub pool_seed: u64,
    pub selection_seed: u64,
    pub template_version: String,
    pub scheme: String,
    pub policy: ScoringPolicy,
    pub ordering: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    /// One entry per scheme class, in scheme order.
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Rows are gold classes, columns predicted classes plus a final
    /// "invalid" column for answers that did not score.
    pub confusion: Vec<Vec<usize>>,
    pub n_predictions: usize,
    pub n_invalid: usize,
    pub n_unparseable: usize,
    pub n_multilabel: usize,
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_report(predictions: &[Prediction], scheme: &LabelScheme, meta: RunMeta) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Evaluation("no predictions to score".into()));
    }
    let n = scheme.len();
    let mut confusion = vec![vec![0usize; n + 1]; n];
    let (mut n_unparseable, mut n_multilabel, mut n_invalid) = (0, 0, 0);
    for p in predictions {
        if !scheme.contains(p.gold) {
            return Err(Error::Evaluation(format!(
                "record {} has gold label {} outside scheme {:?}",
                p.record_id,
                p.gold.0,
                scheme.name()
            )));
        }
        match &p.parsed.outcome {
            ParseOutcome::Unparseable => n_unparseable += 1,
            ParseOutcome::MultiLabel(_) => n_multilabel += 1,
            ParseOutcome::Label(_) => {}
        }
        let col = match p.scored_as {
            Some(l) if scheme.contains(l) => l.index(),
            Some(l) => {
                return Err(Error::Evaluation(format!(
                    "record {} scored as label {} outside the scheme",
                    p.record_id, l.0
                )))
            }
            None => {
                n_invalid += 1;
                n
            }
        };
        confusion[p.gold.index()][col] += 1;
    }

    let total = predictions.len();
    let mut per_class = Vec::with_capacity(n);
    let (mut weighted, mut macro_sum, mut correct) = (0.0, 0.0, 0);
    for (c, def) in scheme.labels().iter().enumerate() {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted += support as f64 * f1;
        macro_sum += f1;
        correct += tp;
        per_class.push(ClassMetrics {
            label: def.name.clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(EvalReport {
        meta,
        per_class,
        weighted_f1: weighted / total as f64,
        macro_f1: macro_sum / n as f64,
        accuracy: ratio(correct, total),
        confusion,
        n_predictions: total,
        n_invalid,
        n_unparseable,
        n_multilabel,
    })
}

/// One line of a per-prediction trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub record_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub gold: String,
    pub completion: String,
    pub parsed: ParsedLabel,
    pub scored_as: Option<String>,
    pub prompt_hash: String,
    pub shots: usize,
    pub examples: Vec<u64>,
}

/// A train/test partition with its pool and fitted spaces, reusable across
/// models, methods and shot counts.
pub struct Prepared {
    pub fold: Option<usize>,
    pub pool: FewShotPool,
    pub test: Vec<RequirementRecord>,
    pub tfidf: TfidfModel,
    pub embedding: Option<EmbeddingMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    /// `None` takes the whole training partition.
    pub size: Option<usize>,
    pub seed: u64,
}

/// Builds pools and spaces for every test partition of `plan`: the single
/// test side of a holdout, or each fold of a k-fold plan.
pub fn prepare(
    corpus: &Corpus,
    plan: &SplitPlan,
    pool: PoolSpec,
    embedder: Option<(&dyn EmbeddingProvider, &Gateway)>,
) -> Result<Vec<Prepared>> {
    let parts: Vec<(Option<usize>, Vec<RequirementRecord>, Vec<RequirementRecord>)> = match plan.kind {
        SplitKind::Holdout { .. } => vec![(None, corpus.partition(plan, TRAIN), corpus.partition(plan, TEST))],
        SplitKind::Kfold { k } => (0..k)
            .map(|f| (Some(f), corpus.complement(plan, f), corpus.partition(plan, f)))
            .collect(),
    };
    parts
        .into_iter()
        .map(|(fold, train, test)| {
            let source = match fold {
                None => "train".to_string(),
                Some(f) => format!("folds-except-{f}"),
            };
            let size = pool.size.unwrap_or(train.len());
            let pool = build_pool(&train, size, pool.seed, source)?;
            let tfidf = fit_tfidf(&pool.candidates);
            let embedding = match embedder {
                Some((provider, gw)) if !pool.is_empty() => Some(build_embedding_matrix(
                    &pool.candidates,
                    provider,
                    gw.embedding_cache(),
                    64,
                    1,
                )?),
                _ => None,
            };
            Ok(Prepared {
                fold,
                pool,
                test,
                tfidf,
                embedding,
            })
        })
        .collect()
}

/// One evaluation cell.
pub struct Experiment<'a> {
    pub model: &'a ChatModel,
    pub method: Method,
    pub shots: usize,
    pub selection_seed: u64,
    pub ordering: OrderingPolicy,
    pub template: &'a PromptTemplate,
    pub policy: ScoringPolicy,
    /// Records in flight at once.
    pub concurrency: usize,
}

pub struct Runtime<'a> {
    pub gateway: &'a Gateway,
    pub embedder: Option<&'a dyn EmbeddingProvider>,
}

/// Predictions and trace rows for one prepared partition, in test order.
pub fn evaluate_partition(
    scheme: &LabelScheme,
    prepared: &Prepared,
    exp: &Experiment<'_>,
    rt: &Runtime<'_>,
) -> Result<(Vec<Prediction>, Vec<TraceRow>)> {
    let spaces = Spaces {
        tfidf: Some(&prepared.tfidf),
        embedding: match (&prepared.embedding, rt.embedder) {
            (Some(matrix), Some(provider)) => Some(EmbeddingSpace {
                matrix,
                provider,
                cache: rt.gateway.embedding_cache(),
            }),
            _ => None,
        },
    };
    let cfg = SelectionConfig {
        method: exp.method,
        k: exp.shots,
        seed: exp.selection_seed,
        exclude_query_record: true,
    };
    let one = |rec: &RequirementRecord| -> Result<(Prediction, TraceRow)> {
        let sel = select(&prepared.pool, Query::Record(rec), &cfg, &spaces)?;
        let prompt = render_prompt(exp.template, scheme, &sel, &prepared.pool, &rec.text, exp.ordering)?;
        let done = rt.gateway.complete(exp.model, &prompt)?;
        let parsed = parse_label(&done.completion, scheme);
        let scored_as = score_prediction(&parsed, exp.policy);
        let row = TraceRow {
            record_id: rec.record_id,
            fold: prepared.fold,
            gold: scheme.name_of(rec.label).to_string(),
            completion: done.completion,
            parsed: parsed.clone(),
            scored_as: scored_as.map(|l| scheme.name_of(l).to_string()),
            prompt_hash: prompt.content_hash.clone(),
            shots: prompt.shot_count,
            examples: prompt.example_provenance,
        };
        let pred = Prediction {
            record_id: rec.record_id,
            gold: rec.label,
            parsed,
            scored_as,
            prompt_hash: prompt.content_hash,
        };
        Ok((pred, row))
    };
    let results: Vec<Result<(Prediction, TraceRow)>> = if exp.concurrency <= 1 {
        prepared.test.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(exp.concurrency)
            .build()
            .map_err(|e| Error::Evaluation(format!("cannot start worker pool: {e}")))?;
        pool.install(|| prepared.test.par_iter().map(one).collect())
    };
    let mut preds = Vec::with_capacity(results.len());
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let (p, t) = r?;
        preds.push(p);
        rows.push(t);
    }
    Ok((preds, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Holdout report, or the pooled report over all folds.
    pub report: EvalReport,
    /// Empty for holdout runs.
    pub folds: Vec<EvalReport>,
    pub trace: Vec<TraceRow>,
}

pub fn split_label(kind: &SplitKind) -> String {
    match kind {
        SplitKind::Holdout { train_fraction } => format!("holdout:{train_fraction}"),
        SplitKind::Kfold { k } => format!("kfold:{k}"),
    }
}

/// Runs `exp` over prepared partitions. With several partitions (k-fold)
/// the main report pools all predictions and per-fold reports are kept.
pub fn run_prepared(
    corpus: &Corpus,
    plan: &SplitPlan,
    prepared: &[Prepared],
    pool_seed: u64,
    exp: &Experiment<'_>,
    rt: &Runtime<'_>,
) -> Result<RunOutcome> {
    let scheme = corpus.scheme();
    let meta = RunMeta {
        model: exp.model.profile.name.clone(),
        method: exp.method.to_string(),
        shots: exp.shots,
        split: split_label(&plan.kind),
        split_seed: plan.seed,
        pool_seed,
        selection_seed: exp.selection_seed,
        template_version: exp.template.version.clone(),
        scheme: scheme.name().to_string(),
        policy: exp.policy,
        ordering: exp.ordering.to_string(),
        fold: None,
    };
    let mut all_preds = Vec::new();
    let mut trace = Vec::new();
    let mut folds = Vec::new();
    for p in prepared {
        let (preds, rows) = evaluate_partition(scheme, p, exp, rt)?;
        if p.fold.is_some() {
            let fold_meta = RunMeta {
                fold: p.fold,
                ..meta.clone()
            };
            folds.push(compute_report(&preds, scheme, fold_meta)?);
        }
        all_preds.extend(preds);
        trace.extend(rows);
    }
    Ok(RunOutcome {
        report: compute_report(&all_preds, scheme, meta)?,
        folds,
        trace,
    })
}

pub fn run_holdout(
    corpus: &Corpus,
    plan: &SplitPlan,
    pool: PoolSpec,
    exp: &Experiment<'_>,
    rt: &Runtime<'_>,
) -> Result<RunOutcome> {
    if !matches!(plan.kind, SplitKind::Holdout { .. }) {
        return Err(Error::Evaluation("run_holdout needs a holdout split".into()));
    }
    let prepared = prepare(corpus, plan, pool, embed_pair(exp, rt))?;
    run_prepared(corpus, plan, &prepared, pool.seed, exp, rt)
}

pub fn run_kfold(
    corpus: &Corpus,
    plan: &SplitPlan,
    pool: PoolSpec,
    exp: &Experiment<'_>,
    rt: &Runtime<'_>,
) -> Result<RunOutcome> {
    match plan.kind {
        SplitKind::Kfold { k } if k >= 2 => {}
        _ => return Err(Error::Evaluation("run_kfold needs a k-fold split with k >= 2".into())),
    }
    let prepared = prepare(corpus, plan, pool, embed_pair(exp, rt))?;
    run_prepared(corpus, plan, &prepared, pool.seed, exp, rt)
}

fn embed_pair<'a>(exp: &Experiment<'_>, rt: &Runtime<'a>) -> Option<(&'a dyn EmbeddingProvider, &'a Gateway)> {
    match (exp.method, rt.embedder) {
        (Method::Embedding, Some(e)) => Some((e, rt.gateway)),
        _ => None,
    }
}

/// Re-scores trace rows; fails on gold or predicted names outside `scheme`.
pub fn predictions_from_trace(
    rows: &[TraceRow],
    scheme: &LabelScheme,
    policy: ScoringPolicy,
) -> Result<Vec<Prediction>> {
    rows.iter()
        .map(|r| {
            let gold = scheme.resolve(&r.gold).ok_or_else(|| {
                Error::Evaluation(format!(
                    "trace gold label {:?} not in scheme {:?}",
                    r.gold,
                    scheme.name()
                ))
            })?;
            Ok(Prediction {
                record_id: r.record_id,
                gold,
                parsed: r.parsed.clone(),
                scored_as: score_prediction(&r.parsed, policy),
                prompt_hash: r.prompt_hash.clone(),
            })
        })
        .collect()
}
