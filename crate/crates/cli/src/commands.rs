use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fewshot_core::config::{DatasetConfig, RunConfig, Session, SplitKindName};
use fewshot_core::corpus::{load_corpus, make_split, CsvSpec, LabelScheme, TRAIN};
use fewshot_core::eval::{
    prepare, run_prepared, split_label, EvalReport, Experiment, Prepared, RunMeta, RunOutcome, ScoringPolicy,
};
use fewshot_core::report::{
    emit_curve_data, emit_table, read_trace, replay, trace_to_jsonl, write_atomic, RunManifest, TableLayout,
};
use fewshot_core::selection::{build_pool, select, EmbeddingSpace, Method, Query, SelectionConfig, Spaces};
use fewshot_core::sweep::{cell_matrix, compare_methods, run_sweep, SweepSettings};
use fewshot_core::vectorspace::{build_embedding_matrix, fit_tfidf};
use fewshot_core::Error;
use serde_json::{json, Value};

use crate::{
    Cli, Command, ConfigArgs, CvArgs, Failure, IngestArgs, ReplayArgs, ReportArgs, SelectArgs, EXIT_CONFIG,
    EXIT_PARTIAL,
};

type CmdResult = Result<u8, Failure>;

pub fn dispatch(cli: &Cli) -> CmdResult {
    let out = Output { json: cli.json };
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &out),
        Command::Pool(a) => cmd_pool(a, cli.dry_run, &out),
        Command::Select(a) => cmd_select(a, cli.dry_run, &out),
        Command::Run(a) => cmd_run(a, cli.dry_run, &out),
        Command::Sweep(a) => cmd_sweep(a, cli.dry_run, &out),
        Command::Cv(a) => cmd_cv(a, cli.dry_run, &out),
        Command::Report(a) => cmd_report(a, &out),
        Command::Replay(a) => cmd_replay(a, &out),
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, value: Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
        } else {
            print!("{}", text());
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: msg.into(),
    }
}

/// File name fragment safe on every platform.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    write(path, &text)
}

/// Config file (or a bare dataset) with command-line overrides applied, then
/// validated. Nothing is read beyond the config file itself.
fn load_config(a: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => RunConfig::from_file(path)?,
        None => {
            let (Some(data), Some(scheme)) = (&a.data, &a.scheme) else {
                return Err(config_error("give --config, or both --data and --scheme"));
            };
            RunConfig {
                dataset: DatasetConfig {
                    path: data.clone(),
                    scheme: scheme.clone(),
                    text_column: "text".into(),
                    label_column: "label".into(),
                    name: None,
                },
                split: Default::default(),
                pool: Default::default(),
                selection: Default::default(),
                prompt: Default::default(),
                scoring: Default::default(),
                sweep: Default::default(),
                run: Default::default(),
                retry: Default::default(),
                models: Vec::new(),
            }
        }
    };
    if let Some(d) = &a.data {
        c.dataset.path = d.clone();
    }
    if let Some(s) = &a.scheme {
        c.dataset.scheme = s.clone();
    }
    if let Some(o) = &a.out {
        c.run.out_dir = o.clone();
    }
    if let Some(d) = &a.cache_dir {
        c.run.cache_dir = d.clone();
    }
    if !a.models.is_empty() {
        c.run.models = a.models.clone();
    }
    if let Some(m) = &a.method {
        c.selection.method = m.parse()?;
    }
    if !a.methods.is_empty() {
        c.selection.methods = a.methods.iter().map(|m| m.parse()).collect::<Result<_, Error>>()?;
    }
    if let Some(k) = a.shots {
        c.selection.shots = k;
    }
    if !a.grid.is_empty() {
        c.selection.grid = a.grid.clone();
    }
    if let Some(f) = a.folds {
        c.split.kind = SplitKindName::Kfold;
        c.split.folds = f;
    }
    if let Some(p) = &a.policy {
        c.scoring.policy = p.parse()?;
    }
    if let Some(n) = a.pool_size {
        c.pool.size = Some(n);
    }
    if let Some(s) = a.seed {
        c.split.seed = s;
    }
    if let Some(n) = a.concurrency {
        c.run.concurrency = n;
    }
    if let Some(t) = a.threshold {
        c.sweep.threshold = t;
    }
    c.validate()?;
    Ok(c)
}

fn open_session(c: RunConfig, no_cache: bool) -> Result<Session, Failure> {
    let cache = if no_cache { None } else { Some(c.run.cache_dir.clone()) };
    Ok(Session::open(c, cache.as_deref())?)
}

fn cmd_ingest(a: &IngestArgs, out: &Output) -> CmdResult {
    let cfg_args = ConfigArgs {
        config: a.config.clone(),
        data: a.data.clone(),
        scheme: a.scheme.clone(),
        ..Default::default()
    };
    let mut c = load_config(&cfg_args)?;
    if let Some(t) = &a.text_column {
        c.dataset.text_column = t.clone();
    }
    if let Some(l) = &a.label_column {
        c.dataset.label_column = l.clone();
    }
    let scheme = c.scheme()?;
    let spec = CsvSpec {
        text_column: c.dataset.text_column.clone(),
        label_column: c.dataset.label_column.clone(),
        dataset: c.dataset.name.clone(),
    };
    let corpus = load_corpus(&c.dataset.path, &spec, &scheme)?;
    let dist = corpus.distribution();
    if let Some(p) = &a.split_out {
        let plan = make_split(&corpus, c.split.kind(), c.split.seed)?;
        plan.write_json(p)?;
    }
    out.emit(
        json!({
            "dataset": c.dataset.path,
            "scheme": scheme.name(),
            "total": corpus.len(),
            "content_hash": corpus.content_hash(),
            "classes": dist.iter().map(|(n, k)| json!({"label": n, "count": k})).collect::<Vec<_>>(),
        }),
        || {
            let mut s = format!(
                "{} ({} records, scheme {})\n",
                c.dataset.path.display(),
                corpus.len(),
                scheme.name()
            );
            for (name, n) in &dist {
                s.push_str(&format!("  {name:<6} {n:>6}\n"));
            }
            s
        },
    );
    Ok(0)
}

fn cmd_pool(a: &ConfigArgs, dry_run: bool, out: &Output) -> CmdResult {
    let c = load_config(a)?;
    if dry_run {
        out.emit(json!({"dry_run": true, "pool": c.pool}), || {
            format!(
                "would build a pool (size {:?}, seed {}) from {}\n",
                c.pool.size,
                c.pool.seed,
                c.dataset.path.display()
            )
        });
        return Ok(0);
    }
    let s = open_session(c, true)?;
    let plan = s.split()?;
    let train = match plan.kind {
        fewshot_core::corpus::SplitKind::Holdout { .. } => s.corpus.partition(&plan, TRAIN),
        fewshot_core::corpus::SplitKind::Kfold { .. } => s.corpus.complement(&plan, 0),
    };
    let size = s.config.pool.size.unwrap_or(train.len());
    let pool = build_pool(&train, size, s.config.pool.seed, "train")?;
    let scheme = s.corpus.scheme();
    let counts: Vec<(String, usize)> = pool
        .class_counts()
        .iter()
        .map(|(l, n)| (scheme.name_of(*l).to_string(), *n))
        .collect();
    let path = s.config.run.out_dir.join("pool.json");
    write_json(
        &path,
        &json!({"pool_seed": pool.pool_seed, "source": pool.source_partition, "ids": pool.ids()}),
    )?;
    out.emit(json!({"size": pool.len(), "classes": counts, "path": path}), || {
        let mut t = format!("pool of {} candidates -> {}\n", pool.len(), path.display());
        for (n, k) in &counts {
            t.push_str(&format!("  {n:<6} {k:>6}\n"));
        }
        t
    });
    Ok(0)
}

fn cmd_select(a: &SelectArgs, dry_run: bool, out: &Output) -> CmdResult {
    let c = load_config(&a.cfg)?;
    if a.query.is_none() && a.record_id.is_none() {
        return Err(config_error("give --query or --record-id"));
    }
    if dry_run {
        out.emit(json!({"dry_run": true}), || "configuration valid\n".into());
        return Ok(0);
    }
    let s = open_session(c, a.cfg.no_cache)?;
    let plan = s.split()?;
    let train = match plan.kind {
        fewshot_core::corpus::SplitKind::Holdout { .. } => s.corpus.partition(&plan, TRAIN),
        fewshot_core::corpus::SplitKind::Kfold { .. } => s.corpus.complement(&plan, 0),
    };
    let size = s.config.pool.size.unwrap_or(train.len());
    let pool = build_pool(&train, size, s.config.pool.seed, "train")?;
    let tfidf = fit_tfidf(&pool.candidates);
    let method = s.config.selection.method;
    let matrix = if method == Method::Embedding {
        Some(build_embedding_matrix(
            &pool.candidates,
            s.embedder.as_ref(),
            s.gateway.embedding_cache(),
            64,
            1,
        )?)
    } else {
        None
    };
    let spaces = Spaces {
        tfidf: Some(&tfidf),
        embedding: matrix.as_ref().map(|m| EmbeddingSpace {
            matrix: m,
            provider: s.embedder.as_ref(),
            cache: s.gateway.embedding_cache(),
        }),
    };
    let query = match (&a.query, a.record_id) {
        (Some(q), _) => Query::Text(q),
        (None, Some(id)) => Query::Record(
            s.corpus
                .get(id)
                .ok_or_else(|| Failure::from(Error::Selection(format!("no record {id} in the dataset"))))?,
        ),
        _ => unreachable!(),
    };
    let cfg = SelectionConfig {
        method,
        k: s.config.selection.shots,
        seed: s.config.selection.seed,
        exclude_query_record: true,
    };
    let result = select(&pool, query, &cfg, &spaces)?;
    let scheme = s.corpus.scheme();
    let rows: Vec<Value> = result
        .chosen
        .iter()
        .map(|ch| {
            let r = pool.get(ch.record_id).expect("chosen from pool");
            json!({"record_id": r.record_id, "label": scheme.name_of(r.label), "similarity": ch.similarity, "text": r.text})
        })
        .collect();
    out.emit(
        json!({"method": method, "k_requested": cfg.k, "k_delivered": result.k_delivered, "chosen": rows}),
        || {
            let mut t = format!("{} of {} requested ({method})\n", result.k_delivered, cfg.k);
            for r in &rows {
                let sim = r["similarity"]
                    .as_f64()
                    .map(|x| format!("{x:.3}"))
                    .unwrap_or_else(|| "-".into());
                t.push_str(&format!(
                    "  {:>5}  {:<5} {sim:>6}  {}\n",
                    r["record_id"],
                    r["label"].as_str().unwrap_or(""),
                    r["text"].as_str().unwrap_or("")
                ));
            }
            t
        },
    );
    Ok(0)
}

fn needs_embedding(methods: &[Method]) -> bool {
    methods.contains(&Method::Embedding)
}

fn prepare_for(
    s: &Session,
    plan: &fewshot_core::corpus::SplitPlan,
    methods: &[Method],
) -> Result<Vec<Prepared>, Failure> {
    let embedder = if needs_embedding(methods) {
        Some((s.embedder.as_ref(), s.gateway.as_ref()))
    } else {
        None
    };
    Ok(prepare(&s.corpus, plan, s.pool_spec(), embedder)?)
}

/// Writes a run outcome under `dir`; returns artifact paths relative to `root`.
fn write_outcome(root: &Path, dir: &Path, o: &RunOutcome) -> Result<BTreeMap<String, String>, Failure> {
    let mut arts = BTreeMap::new();
    let rel = |p: &Path| p.strip_prefix(root).unwrap_or(p).display().to_string();
    let report = dir.join("report.json");
    write_json(&report, &o.report)?;
    let trace = dir.join("trace.jsonl");
    write(&trace, &trace_to_jsonl(&o.trace))?;
    arts.insert("report".into(), rel(&report));
    arts.insert("trace".into(), rel(&trace));
    for f in &o.folds {
        let p = dir
            .join("folds")
            .join(format!("fold-{:02}.json", f.meta.fold.unwrap_or(0)));
        write_json(&p, f)?;
    }
    if !o.folds.is_empty() {
        arts.insert("folds".into(), rel(&dir.join("folds")));
    }
    Ok(arts)
}

fn write_table(dir: &Path, reports: &[EvalReport], scheme: &LabelScheme) -> Result<String, Failure> {
    let t = emit_table(reports, TableLayout::for_scheme(scheme))?;
    write(&dir.join("table.txt"), &t.text)?;
    write(&dir.join("table.csv"), &t.csv)?;
    Ok(t.text)
}

fn report_summary(r: &EvalReport) -> Value {
    json!({
        "model": r.meta.model, "method": r.meta.method, "shots": r.meta.shots, "split": r.meta.split,
        "weighted_f1": r.weighted_f1, "macro_f1": r.macro_f1, "n_predictions": r.n_predictions,
        "n_invalid": r.n_invalid,
    })
}

/// Evaluates every run model at one (method, shots) over `plan`; shared by
/// `run` and `cv`.
fn evaluate_models(
    s: &Session,
    plan: &fewshot_core::corpus::SplitPlan,
    method: Method,
    shots_for: &dyn Fn(&str) -> Result<usize, Failure>,
    command: &str,
    out: &Output,
) -> CmdResult {
    let root = s.config.run.out_dir.clone();
    let dir = root.join(command);
    let mut manifest = RunManifest::new(command, s.config.semantic_json(), &s.corpus.content_hash());
    let prepared = prepare_for(s, plan, &[method])?;
    let ordering = s.config.ordering()?;
    let models = s.chat_models()?;
    let mut shots_used = BTreeMap::new();
    for model in &models {
        shots_used.insert(model.profile.name.clone(), shots_for(&model.profile.name)?);
    }
    let mut reports = Vec::new();
    for model in &models {
        let shots = shots_used[&model.profile.name];
        let exp = Experiment {
            model,
            method,
            shots,
            selection_seed: s.config.selection.seed,
            ordering,
            template: &s.template,
            policy: s.config.scoring.policy,
            concurrency: s.config.run.concurrency,
        };
        let o = run_prepared(&s.corpus, plan, &prepared, s.config.pool.seed, &exp, &s.runtime())?;
        let arts = write_outcome(&root, &dir.join(slug(&model.profile.name)), &o)?;
        for (k, v) in arts {
            manifest.artifacts.insert(format!("{}/{k}", model.profile.name), v);
        }
        reports.push(o.report);
    }
    let text = write_table(&dir, &reports, s.corpus.scheme())?;
    manifest
        .artifacts
        .insert("table".into(), format!("{command}/table.txt"));
    manifest
        .artifacts
        .insert("table_csv".into(), format!("{command}/table.csv"));
    manifest.summary = json!({"shots": shots_used, "reports": reports.iter().map(report_summary).collect::<Vec<_>>()});
    let mpath = manifest.write(&root)?;
    let stats = s.gateway.stats();
    out.emit(
        json!({"manifest": mpath, "reports": reports.iter().map(report_summary).collect::<Vec<_>>(), "gateway": stats}),
        || {
            format!(
                "{text}\nmanifest: {}\nupstream calls: {}, cache hits: {}\n",
                mpath.display(),
                stats.upstream_calls,
                stats.completion_cache_hits
            )
        },
    );
    Ok(0)
}

fn cmd_run(a: &ConfigArgs, dry_run: bool, out: &Output) -> CmdResult {
    let c = load_config(a)?;
    if dry_run {
        let models = c.run_models();
        out.emit(
            json!({"dry_run": true, "models": models, "method": c.selection.method, "shots": c.selection.shots, "split": split_label(&c.split.kind())}),
            || format!("would run {} model(s), {} selection, {} shots, {}\n", models.len(), c.selection.method, c.selection.shots, split_label(&c.split.kind())),
        );
        return Ok(0);
    }
    let s = open_session(c, a.no_cache)?;
    let plan = s.split()?;
    let shots = s.config.selection.shots;
    evaluate_models(&s, &plan, s.config.selection.method, &|_| Ok(shots), "run", out)
}

fn cmd_sweep(a: &ConfigArgs, dry_run: bool, out: &Output) -> CmdResult {
    let c = load_config(a)?;
    let models = c.run_models();
    if models.is_empty() {
        return Err(config_error("no chat models configured"));
    }
    let cells = cell_matrix(&models, &c.selection.methods, &c.selection.grid);
    if dry_run {
        out.emit(
            json!({
                "dry_run": true,
                "cells": cells.len(),
                "matrix": cells.iter().map(|(m, me, k)| json!({"model": m, "method": me, "shots": k})).collect::<Vec<_>>(),
            }),
            || {
                let mut t = String::new();
                for (m, me, k) in &cells {
                    t.push_str(&format!("{m}\t{me}\t{k}\n"));
                }
                t.push_str(&format!(
                    "{} cells ({} models x {} methods x {} shot counts)\n",
                    cells.len(),
                    models.len(),
                    c.selection.methods.len(),
                    c.selection.grid.len()
                ));
                t
            },
        );
        return Ok(0);
    }
    let s = open_session(c, a.no_cache)?;
    let plan = s.split()?;
    let prepared = prepare_for(&s, &plan, &s.config.selection.methods)?;
    let chat = s.chat_models()?;
    let settings = SweepSettings {
        grid: &s.config.selection.grid,
        methods: &s.config.selection.methods,
        threshold: s.config.sweep.threshold,
        pool_seed: s.config.pool.seed,
        selection_seed: s.config.selection.seed,
        ordering: s.config.ordering()?,
        template: &s.template,
        policy: s.config.scoring.policy,
        concurrency: s.config.run.concurrency,
    };
    let outcome = run_sweep(&s.corpus, &plan, &prepared, &chat, &settings, &s.runtime())?;

    let root = s.config.run.out_dir.clone();
    let dir = root.join("sweep");
    let mut manifest = RunManifest::new("sweep", s.config.semantic_json(), &s.corpus.content_hash());
    let mut failures = Vec::new();
    for cell in &outcome.cells {
        let name = format!("{}__{}__{:03}", slug(&cell.model), cell.method, cell.shots);
        match (&cell.outcome, &cell.error) {
            (Some(o), _) => {
                write_json(&dir.join("cells").join(format!("{name}.json")), &o.report)?;
                write(
                    &dir.join("traces").join(format!("{name}.jsonl")),
                    &trace_to_jsonl(&o.trace),
                )?;
            }
            (None, Some(e)) => {
                failures.push(json!({"model": cell.model, "method": cell.method, "shots": cell.shots, "error": e}))
            }
            _ => {}
        }
    }
    let files = emit_curve_data(&outcome.curves)?;
    write(&dir.join("curves.json"), &files.json)?;
    write(&dir.join("curves.csv"), &files.csv)?;
    let mut rankings = Vec::new();
    for m in &models {
        let curves: Vec<_> = outcome.curves.iter().filter(|c| &c.model == m).cloned().collect();
        if curves.len() >= 2 {
            rankings.push(compare_methods(&curves, &s.config.selection.methods)?);
        }
    }
    write_json(&dir.join("rankings.json"), &rankings)?;
    for (k, v) in [
        ("curves", "sweep/curves.json"),
        ("curves_csv", "sweep/curves.csv"),
        ("rankings", "sweep/rankings.json"),
        ("cells", "sweep/cells"),
        ("traces", "sweep/traces"),
    ] {
        manifest.artifacts.insert(k.into(), v.into());
    }
    if !failures.is_empty() {
        write_json(&dir.join("failures.json"), &failures)?;
        manifest
            .artifacts
            .insert("failures".into(), "sweep/failures.json".into());
    }
    let optimal: BTreeMap<String, usize> = outcome
        .curves
        .iter()
        .map(|c| (format!("{}/{}", c.model, c.method), c.optimal_shots))
        .collect();
    manifest.summary = json!({"optimal_shots": optimal, "failed_cells": failures.len(), "cells": outcome.cells.len()});
    let mpath = manifest.write(&root)?;
    let stats = s.gateway.stats();
    out.emit(
        json!({"manifest": mpath, "cells": outcome.cells.len(), "failed_cells": failures.len(), "optimal_shots": optimal, "curves": outcome.curves, "gateway": stats}),
        || {
            let mut t = String::new();
            for c in &outcome.curves {
                let flag = match &c.overprompting {
                    Some(v) if v.flagged => format!(", over-prompting (decline {:.3})", v.max_post_peak_decline),
                    _ => String::new(),
                };
                t.push_str(&format!(
                    "{} / {}: peak weighted F1 {:.3} at {} shots{flag}\n",
                    c.model, c.method, c.peak_weighted_f1, c.optimal_shots
                ));
            }
            t.push_str(&format!(
                "{} cells, {} failed\nmanifest: {}\nupstream calls: {}, cache hits: {}\n",
                outcome.cells.len(),
                failures.len(),
                mpath.display(),
                stats.upstream_calls,
                stats.completion_cache_hits
            ));
            t
        },
    );
    if failures.is_empty() {
        Ok(0)
    } else {
        for f in &failures {
            eprintln!("cell failed: {f}");
        }
        Ok(EXIT_PARTIAL)
    }
}

/// Optimal shot count per "model/method" from a sweep manifest, given as a
/// manifest file or as the output directory holding it.
fn optimal_from_manifest(path: &Path) -> Result<BTreeMap<String, usize>, Failure> {
    let manifest = if path.is_dir() {
        RunManifest::latest(path, "sweep")?
    } else {
        RunManifest::read(path)?
    };
    if manifest.command != "sweep" {
        return Err(config_error(format!(
            "{} is a {} manifest, not a sweep",
            path.display(),
            manifest.command
        )));
    }
    serde_json::from_value(manifest.summary["optimal_shots"].clone())
        .map_err(|e| config_error(format!("{}: no optimal_shots summary: {e}", path.display())))
}

fn cmd_cv(a: &CvArgs, dry_run: bool, out: &Output) -> CmdResult {
    let mut c = load_config(&a.cfg)?;
    if a.cfg.folds.is_none() && c.split.kind != SplitKindName::Kfold {
        c.split.kind = SplitKindName::Kfold;
    }
    c.validate()?;
    let method = c.selection.method;
    let table = match &a.shots_from {
        Some(p) => Some(optimal_from_manifest(p)?),
        None => None,
    };
    let fixed = c.selection.shots;
    let shots_for = move |model: &str| -> Result<usize, Failure> {
        match &table {
            None => Ok(fixed),
            Some(t) => t
                .get(&format!("{model}/{method}"))
                .copied()
                .ok_or_else(|| config_error(format!("sweep manifest has no optimum for {model}/{method}"))),
        }
    };
    if dry_run {
        let models = c.run_models();
        let shots = models
            .iter()
            .map(|m| shots_for(m).map(|k| (m.clone(), k)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        out.emit(
            json!({"dry_run": true, "folds": c.split.folds, "method": method, "shots": shots}),
            || {
                format!(
                    "would run {}-fold cross-validation with {method} selection, shots {shots:?}\n",
                    c.split.folds
                )
            },
        );
        return Ok(0);
    }
    let s = open_session(c, a.cfg.no_cache)?;
    let plan = s.split()?;
    evaluate_models(&s, &plan, method, &shots_for, "cv", out)
}

fn cmd_report(a: &ReportArgs, out: &Output) -> CmdResult {
    let mut reports: Vec<EvalReport> = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        reports.push(
            serde_json::from_str(&text)
                .map_err(|e| Failure::from(Error::Report(format!("{}: not a report: {e}", p.display()))))?,
        );
    }
    let layout = match a.layout.as_deref() {
        Some("binary") => TableLayout::Binary,
        Some("multiclass") => TableLayout::Multiclass,
        Some(other) => return Err(config_error(format!("unknown layout {other:?} (binary or multiclass)"))),
        None if reports[0].per_class.len() == 2 => TableLayout::Binary,
        None => TableLayout::Multiclass,
    };
    let t = emit_table(&reports, layout)?;
    if let Some(dir) = &a.out {
        write(&dir.join("table.txt"), &t.text)?;
        write(&dir.join("table.csv"), &t.csv)?;
    }
    out.emit(
        json!({"rows": reports.iter().map(report_summary).collect::<Vec<_>>(), "csv": t.csv}),
        || t.text.clone(),
    );
    Ok(0)
}

fn cmd_replay(a: &ReplayArgs, out: &Output) -> CmdResult {
    let policy: ScoringPolicy = a.policy.parse()?;
    let original: Option<EvalReport> = match &a.report {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| Failure::from(Error::Report(format!("{}: {e}", p.display()))))?,
            )
        }
        None => None,
    };
    let scheme_spec = match (&a.scheme, &original) {
        (Some(s), _) => s.clone(),
        (None, Some(r)) => r.meta.scheme.clone(),
        (None, None) => return Err(config_error("give --scheme or --report")),
    };
    let scheme = LabelScheme::resolve_spec(&scheme_spec)?;
    let rows = read_trace(&a.trace)?;
    let meta = original.as_ref().map(|r| r.meta.clone()).unwrap_or_else(|| RunMeta {
        scheme: scheme.name().to_string(),
        ..RunMeta::default()
    });
    let report = replay(&rows, &scheme, policy, meta)?;
    let out_path: Option<PathBuf> = a.out.clone();
    if let Some(p) = &out_path {
        write_json(p, &report)?;
    }
    let same = original.as_ref().map(|o| o == &report);
    out.emit(
        json!({"report": report_summary(&report), "policy": policy, "identical_to_original": same}),
        || {
            let mut t = format!(
                "replayed {} rows under {policy}: weighted F1 {:.4}, macro F1 {:.4}, invalid {}\n",
                report.n_predictions, report.weighted_f1, report.macro_f1, report.n_invalid
            );
            if let Some(s) = same {
                t.push_str(&format!("identical to original report: {s}\n"));
            }
            t
        },
    );
    Ok(0)
}
