//! Shot-count sweeps, F1-vs-shots curves and over-prompting verdicts.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{run_prepared, EvalReport, Experiment, Prepared, RunOutcome, Runtime, ScoringPolicy};
use crate::gateway::ChatModel;
use crate::prompt::{OrderingPolicy, PromptTemplate};
use crate::selection::Method;

pub const DEFAULT_GRID: [usize; 8] = [0, 5, 10, 20, 40, 80, 120, 160];
pub const DEFAULT_THRESHOLD: f64 = 0.02;

pub fn validate_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("shot grid is empty".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "shot grid must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub shots: usize,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub n_invalid: usize,
}

impl CurvePoint {
    pub fn from_report(r: &EvalReport) -> Self {
        CurvePoint {
            shots: r.meta.shots,
            weighted_f1: r.weighted_f1,
            macro_f1: r.macro_f1,
            n_invalid: r.n_invalid,
        }
    }
}

/// Shot count with the highest weighted F1; the fewest shots among ties.
pub fn find_optimum(points: &[CurvePoint]) -> Option<usize> {
    peak_index(points).map(|i| points[i].shots)
}

fn peak_index(points: &[CurvePoint]) -> Option<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| points[i].shots);
    let mut best: Option<usize> = None;
    for i in order {
        if best.is_none_or(|b| points[i].weighted_f1 > points[b].weighted_f1) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverpromptingVerdict {
    pub flagged: bool,
    pub peak_at: usize,
    pub max_post_peak_decline: f64,
    pub threshold: f64,
}

/// Peak minus the lowest weighted F1 after the peak, flagged when it reaches
/// `threshold` and the peak is not the last point. Needs two points.
pub fn detect_overprompting(points: &[CurvePoint], threshold: f64) -> Option<OverpromptingVerdict> {
    if points.len() < 2 {
        return None;
    }
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.shots);
    let peak = peak_index(&sorted)?;
    let peak_val = sorted[peak].weighted_f1;
    let decline = sorted[peak + 1..]
        .iter()
        .map(|p| peak_val - p.weighted_f1)
        .fold(0.0f64, f64::max);
    let last = peak + 1 == sorted.len();
    Some(OverpromptingVerdict {
        flagged: !last && decline >= threshold,
        peak_at: sorted[peak].shots,
        max_post_peak_decline: decline,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub model: String,
    pub method: Method,
    /// Ordered by shot count.
    pub points: Vec<CurvePoint>,
    pub optimal_shots: usize,
    pub peak_weighted_f1: f64,
    pub overprompting: Option<OverpromptingVerdict>,
}

impl SweepCurve {
    pub fn new(model: &str, method: Method, mut points: Vec<CurvePoint>, threshold: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Evaluation(format!("curve {model}/{method} has no points")));
        }
        points.sort_by_key(|p| p.shots);
        let peak = peak_index(&points).expect("non-empty");
        Ok(SweepCurve {
            model: model.to_string(),
            method,
            optimal_shots: points[peak].shots,
            peak_weighted_f1: points[peak].weighted_f1,
            overprompting: detect_overprompting(&points, threshold),
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: Method,
    pub peak_weighted_f1: f64,
    pub optimal_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub model: String,
    pub ranked: Vec<MethodRank>,
    /// Groups of methods with equal peaks, in ranking order.
    pub ties: Vec<Vec<Method>>,
    /// Declared methods without a curve.
    pub missing: Vec<Method>,
}

/// Ranks one model's methods by peak weighted F1, equal peaks kept in
/// `declared` order.
pub fn compare_methods(curves: &[SweepCurve], declared: &[Method]) -> Result<MethodRanking> {
    let model = match curves.first() {
        Some(c) => c.model.clone(),
        None => return Err(Error::Evaluation("no curves to compare".into())),
    };
    if let Some(c) = curves.iter().find(|c| c.model != model) {
        return Err(Error::Evaluation(format!(
            "curves from different models: {model} and {}",
            c.model
        )));
    }
    if curves.len() < 2 {
        return Err(Error::Evaluation(format!(
            "{model}: need at least two method curves to compare"
        )));
    }
    let pos = |m: Method| declared.iter().position(|d| *d == m).unwrap_or(usize::MAX);
    let mut ranked: Vec<MethodRank> = curves
        .iter()
        .map(|c| MethodRank {
            method: c.method,
            peak_weighted_f1: c.peak_weighted_f1,
            optimal_shots: c.optimal_shots,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.peak_weighted_f1
            .total_cmp(&a.peak_weighted_f1)
            .then_with(|| pos(a.method).cmp(&pos(b.method)))
    });
    let mut ties: Vec<Vec<Method>> = Vec::new();
    for w in ranked.windows(2) {
        if w[0].peak_weighted_f1 == w[1].peak_weighted_f1 {
            match ties.last_mut() {
                Some(g) if g.last() == Some(&w[0].method) => g.push(w[1].method),
                _ => ties.push(vec![w[0].method, w[1].method]),
            }
        }
    }
    let missing = declared
        .iter()
        .copied()
        .filter(|m| !curves.iter().any(|c| c.method == *m))
        .collect();
    Ok(MethodRanking {
        model,
        ranked,
        ties,
        missing,
    })
}

/// Settings shared by every cell of a sweep.
pub struct SweepSettings<'a> {
    pub grid: &'a [usize],
    pub methods: &'a [Method],
    pub threshold: f64,
    pub pool_seed: u64,
    pub selection_seed: u64,
    pub ordering: OrderingPolicy,
    pub template: &'a PromptTemplate,
    pub policy: ScoringPolicy,
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: String,
    pub method: Method,
    pub shots: usize,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub curves: Vec<SweepCurve>,
}

impl SweepOutcome {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Every (model, method, shots) cell in execution order.
pub fn cell_matrix<'m>(models: &'m [String], methods: &[Method], grid: &[usize]) -> Vec<(&'m str, Method, usize)> {
    let mut out = Vec::with_capacity(models.len() * methods.len() * grid.len());
    for m in models {
        for &method in methods {
            for &shots in grid {
                out.push((m.as_str(), method, shots));
            }
        }
    }
    out
}

/// Runs every cell sequentially over the same prepared partitions. A failing
/// cell is recorded and the sweep moves on; its curve is built from the
/// cells that succeeded.
pub fn run_sweep(
    corpus: &Corpus,
    plan: &SplitPlan,
    prepared: &[Prepared],
    models: &[ChatModel],
    settings: &SweepSettings<'_>,
    rt: &Runtime<'_>,
) -> Result<SweepOutcome> {
    validate_grid(settings.grid)?;
    if models.is_empty() || settings.methods.is_empty() {
        return Err(Error::Config("sweep needs at least one model and one method".into()));
    }
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for model in models {
        for &method in settings.methods {
            let mut points = Vec::new();
            for &shots in settings.grid {
                let exp = Experiment {
                    model,
                    method,
                    shots,
                    selection_seed: settings.selection_seed,
                    ordering: settings.ordering,
                    template: settings.template,
                    policy: settings.policy,
                    concurrency: settings.concurrency,
                };
                let (outcome, error) = match run_prepared(corpus, plan, prepared, settings.pool_seed, &exp, rt) {
                    Ok(o) => {
                        points.push(CurvePoint::from_report(&o.report));
                        (Some(o), None)
                    }
                    Err(e) => {
                        log::warn!("cell {}/{method}/{shots} failed: {e}", model.profile.name);
                        (None, Some(e.to_string()))
                    }
                };
                cells.push(CellResult {
                    model: model.profile.name.clone(),
                    method,
                    shots,
                    outcome,
                    error,
                });
            }
            if !points.is_empty() {
                curves.push(SweepCurve::new(
                    &model.profile.name,
                    method,
                    points,
                    settings.threshold,
                )?);
            }
        }
    }
    Ok(SweepOutcome { cells, curves })
}
