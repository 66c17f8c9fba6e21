//! Run manifests, result tables, plot data and trace replay.
//!
//! Column names of the emitted files:
//!
//! * table CSV: `row, model, method, shots, <CLASS>_precision,
//!   <CLASS>_recall, <CLASS>_f1, <CLASS>_support` per class, then
//!   `weighted_precision, weighted_recall, weighted_f1, macro_f1, n_invalid,
//!   n_predictions`
//! * curve CSV: `model, method, shots, weighted_f1, macro_f1, n_invalid,
//!   is_peak`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{LabelScheme, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{compute_report, predictions_from_trace, EvalReport, RunMeta, ScoringPolicy, TraceRow};
use crate::sweep::{OverpromptingVerdict, SweepCurve};

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// SHA-256 of the compact JSON form. `serde_json::Value` keeps object keys
/// sorted, so key order in the source does not matter.
pub fn config_digest(config: &Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    /// The semantic configuration the digest covers (no secrets).
    pub config: Value,
    pub dataset_hash: String,
    /// Artifact name to path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    /// Command-specific results, e.g. optimal shot counts.
    pub summary: Value,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, dataset_hash: &str) -> Self {
        let now = now_rfc3339();
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: config_digest(&config),
            config,
            dataset_hash: dataset_hash.to_string(),
            artifacts: BTreeMap::new(),
            summary: Value::Null,
            started_at: now.clone(),
            finished_at: now,
        }
    }

    /// Writes the manifest under `<out>/manifests/`, never replacing an
    /// existing one. Returns the path written.
    pub fn write(&mut self, out_dir: &Path) -> Result<std::path::PathBuf> {
        self.finished_at = now_rfc3339();
        let dir = out_dir.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stamp = self.started_at.replace([':', '-'], "").replace('.', "");
        let body = serde_json::to_string_pretty(self)?;
        for n in 0.. {
            let name = if n == 0 {
                format!("{}-{stamp}-{}.json", self.command, &self.config_digest[..12])
            } else {
                format!("{}-{stamp}-{}-{n}.json", self.command, &self.config_digest[..12])
            };
            let path = dir.join(name);
            match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
                    return Ok(path);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        unreachable!()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: not a run manifest: {e}", path.display())))
    }

    /// Most recent manifest for `command` in `<out>/manifests/`.
    pub fn latest(out_dir: &Path, command: &str) -> Result<Self> {
        let dir = out_dir.join("manifests");
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut found: Vec<(String, std::path::PathBuf)> = Vec::new();
        for e in entries {
            let p = e.map_err(|e| Error::io(&dir, e))?.path();
            if let Ok(m) = RunManifest::read(&p) {
                if m.command == command {
                    found.push((m.finished_at, p));
                }
            }
        }
        found.sort();
        let (_, path) = found
            .pop()
            .ok_or_else(|| Error::Report(format!("no {command} manifest in {}", dir.display())))?;
        RunManifest::read(&path)
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableLayout {
    /// Per-class P/R/F1 and an overall (weighted) F1 column.
    Binary,
    /// Per-class P/R/F1 and an "Ave." group of weighted P/R/F1.
    Multiclass,
}

impl TableLayout {
    pub fn for_scheme(scheme: &LabelScheme) -> Self {
        match scheme.task_kind() {
            TaskKind::Binary => TableLayout::Binary,
            TaskKind::Multiclass => TableLayout::Multiclass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub text: String,
    pub csv: String,
}

pub fn row_label(meta: &RunMeta) -> String {
    format!("{} / {} / {}-shot", meta.model, meta.method, meta.shots)
}

fn weighted(report: &EvalReport, f: impl Fn(&crate::eval::ClassMetrics) -> f64) -> f64 {
    if report.n_predictions == 0 {
        return 0.0;
    }
    report.per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / report.n_predictions as f64
}

/// Formats reports as a table, one row per report, class columns in
/// scheme order. Text cells are rounded to two decimals; the CSV keeps full
/// precision and the class supports.
pub fn emit_table(reports: &[EvalReport], layout: TableLayout) -> Result<Table> {
    let classes: Vec<String> = match reports.first() {
        Some(r) => r.per_class.iter().map(|c| c.label.clone()).collect(),
        None => Vec::new(),
    };
    for r in reports {
        let names: Vec<&str> = r.per_class.iter().map(|c| c.label.as_str()).collect();
        if r.meta.scheme != reports[0].meta.scheme || names != classes {
            return Err(Error::Report(format!(
                "scheme mismatch: {:?} vs {:?}",
                reports[0].meta.scheme, r.meta.scheme
            )));
        }
    }

    let mut header = vec!["row".to_string(), "model".into(), "method".into(), "shots".into()];
    for c in &classes {
        for m in ["precision", "recall", "f1", "support"] {
            header.push(format!("{c}_{m}"));
        }
    }
    for h in [
        "weighted_precision",
        "weighted_recall",
        "weighted_f1",
        "macro_f1",
        "n_invalid",
        "n_predictions",
    ] {
        header.push(h.into());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| Error::Report(e.to_string()))?;
    for r in reports {
        let mut rec = vec![
            row_label(&r.meta),
            r.meta.model.clone(),
            r.meta.method.clone(),
            r.meta.shots.to_string(),
        ];
        for c in &r.per_class {
            rec.extend([
                c.precision.to_string(),
                c.recall.to_string(),
                c.f1.to_string(),
                c.support.to_string(),
            ]);
        }
        rec.extend([
            weighted(r, |c| c.precision).to_string(),
            weighted(r, |c| c.recall).to_string(),
            r.weighted_f1.to_string(),
            r.macro_f1.to_string(),
            r.n_invalid.to_string(),
            r.n_predictions.to_string(),
        ]);
        w.write_record(&rec).map_err(|e| Error::Report(e.to_string()))?;
    }
    let csv =
        String::from_utf8(w.into_inner().map_err(|e| Error::Report(e.to_string()))?).expect("csv output is utf-8");

    // text: two header lines (class group, metric), then rows
    let mut groups: Vec<(String, Vec<&str>)> = classes
        .iter()
        .map(|c| {
            let support = reports.first().and_then(|r| r.class(c)).map(|m| m.support).unwrap_or(0);
            (format!("{c} ({support})"), vec!["P", "R", "F1"])
        })
        .collect();
    match layout {
        TableLayout::Binary => groups.push(("Overall".into(), vec!["F1"])),
        TableLayout::Multiclass => groups.push(("Ave.".into(), vec!["P", "R", "F1"])),
    }
    let rows: Vec<(String, Vec<f64>)> = reports
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = r.per_class.iter().flat_map(|c| [c.precision, c.recall, c.f1]).collect();
            match layout {
                TableLayout::Binary => v.push(r.weighted_f1),
                TableLayout::Multiclass => {
                    v.extend([weighted(r, |c| c.precision), weighted(r, |c| c.recall), r.weighted_f1])
                }
            }
            (row_label(&r.meta), v)
        })
        .collect();
    let label_w = rows.iter().map(|r| r.0.chars().count()).chain([5]).max().unwrap_or(5);
    let cell_w = 5;
    let mut text = String::new();
    let _ = write!(text, "{:label_w$}", "");
    for (g, metrics) in &groups {
        let span = metrics.len() * (cell_w + 1) - 1;
        let _ = write!(text, " | {g:^span$}");
    }
    text.push('\n');
    let _ = write!(text, "{:label_w$}", "Model");
    for (_, metrics) in &groups {
        text.push_str(" |");
        for m in metrics {
            let _ = write!(text, " {m:>cell_w$}");
        }
    }
    text.push('\n');
    for (label, vals) in &rows {
        let _ = write!(text, "{label:label_w$}");
        let mut i = 0;
        for (_, metrics) in &groups {
            text.push_str(" |");
            for _ in metrics {
                let _ = write!(text, " {:>cell_w$.2}", vals[i]);
                i += 1;
            }
        }
        text.push('\n');
    }
    Ok(Table { text, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub model: String,
    pub method: String,
    pub shots: Vec<usize>,
    pub weighted_f1: Vec<f64>,
    pub macro_f1: Vec<f64>,
    pub n_invalid: Vec<usize>,
    pub optimal_shots: usize,
    pub peak_weighted_f1: f64,
    pub overprompting: Option<OverpromptingVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub series: Vec<CurveSeries>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveFiles {
    pub json: String,
    pub csv: String,
}

pub fn emit_curve_data(curves: &[SweepCurve]) -> Result<CurveFiles> {
    let data = CurveData {
        series: curves
            .iter()
            .map(|c| CurveSeries {
                model: c.model.clone(),
                method: c.method.to_string(),
                shots: c.points.iter().map(|p| p.shots).collect(),
                weighted_f1: c.points.iter().map(|p| p.weighted_f1).collect(),
                macro_f1: c.points.iter().map(|p| p.macro_f1).collect(),
                n_invalid: c.points.iter().map(|p| p.n_invalid).collect(),
                optimal_shots: c.optimal_shots,
                peak_weighted_f1: c.peak_weighted_f1,
                overprompting: c.overprompting,
            })
            .collect(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "method",
        "shots",
        "weighted_f1",
        "macro_f1",
        "n_invalid",
        "is_peak",
    ])
    .map_err(|e| Error::Report(e.to_string()))?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.model.clone(),
                c.method.to_string(),
                p.shots.to_string(),
                p.weighted_f1.to_string(),
                p.macro_f1.to_string(),
                p.n_invalid.to_string(),
                (p.shots == c.optimal_shots).to_string(),
            ])
            .map_err(|e| Error::Report(e.to_string()))?;
        }
    }
    Ok(CurveFiles {
        json: serde_json::to_string_pretty(&data)? + "\n",
        csv: String::from_utf8(w.into_inner().map_err(|e| Error::Report(e.to_string()))?).expect("utf-8"),
    })
}

pub fn read_curve_data(path: &Path) -> Result<CurveData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

pub fn trace_to_jsonl(rows: &[TraceRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("trace row serializes"));
        out.push('\n');
    }
    out
}

/// Parses a JSONL trace; `path` only labels errors. Blank lines are skipped.
pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(line).map_err(|e| Error::Trace {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path)
}

/// Re-scores a trace under `policy` without contacting any model.
pub fn replay(rows: &[TraceRow], scheme: &LabelScheme, policy: ScoringPolicy, meta: RunMeta) -> Result<EvalReport> {
    let preds = predictions_from_trace(rows, scheme, policy)?;
    compute_report(&preds, scheme, RunMeta { policy, ..meta })
}
