//! Scoring model answers: embedding similarity, correlation with human
//! ratings, keyword pass rates and span × difficulty reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, Embedder, EmbeddingVector};
use crate::calendar;
use crate::emtest::{Difficulty, EMTestDataset, SpanLabel, TestInstance, TestPoint, Variant};
use crate::temporal_qa::{self, Horizon, QAItem};

/// Correlations strictly above this are labelled highly positive.
pub const HIGH_CORRELATION: f64 = 0.8;

pub const HUMAN_SCALE: (f64, f64) = (1.0, 10.0);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding failed: {0}")]
    Embedding(#[source] BackendError),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("{0}")]
    Precondition(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 pairs, got {0}")]
    TooFew(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("join failed: {0}")]
    Join(String),
    #[error("human score {score} for {point_id} is outside 1..=10")]
    HumanScore { point_id: String, score: f64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// `100 × cos(a, b)`.
pub fn cosine_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::LengthMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    Ok((100.0 * a.dot(b) / (na * nb)).clamp(-100.0, 100.0))
}

/// Similarity of a response to its reference. An empty response scores 0
/// (callers flag it) instead of failing.
pub fn similarity(
    response: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    if reference.trim().is_empty() {
        return Err(EvalError::Precondition("reference answer is empty".into()));
    }
    if response.trim().is_empty() {
        return Ok(0.0);
    }
    let a = embedder.embed(response).map_err(EvalError::Embedding)?;
    let b = embedder.embed(reference).map_err(EvalError::Embedding)?;
    cosine_score(&a, &b)
}

/// Pearson's r.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(EvalError::TooFew(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::ZeroVariance("xs"));
    }
    if syy == 0.0 {
        return Err(EvalError::ZeroVariance("ys"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationLabel {
    HighlyPositive,
    Other,
}

pub fn correlation_label(r: f64) -> CorrelationLabel {
    if r > HIGH_CORRELATION {
        CorrelationLabel::HighlyPositive
    } else {
        CorrelationLabel::Other
    }
}

pub fn correlate(human: &[f64], sim: &[f64]) -> Result<(f64, CorrelationLabel), EvalError> {
    let r = pearson(human, sim)?;
    Ok((r, correlation_label(r)))
}

/// Why a result should not be taken at face value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    EmptyResponse,
    BackendFailure { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point_id: String,
    pub model_output: String,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<SpanLabel>,
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<Flag>,
}

/// The conversation sent for a point: the reference history up to the
/// point's position, the observation (with-time only), then the question.
pub fn point_messages(instance: &TestInstance, point: &TestPoint) -> Vec<ChatMessage> {
    let mut messages: Vec<ChatMessage> = instance.history[..point.position]
        .iter()
        .map(|t| ChatMessage::new(t.role, t.content.clone()))
        .collect();
    if instance.variant == Variant::WithTime {
        if let Some(obs) = point.observation {
            messages.push(ChatMessage::observation(calendar::format_timestamp(&obs)));
        }
    }
    messages.push(ChatMessage::user(point.question.clone()));
    messages
}

/// Asks the model, mapping backend failures to a flag.
fn ask(model: &dyn ChatBackend, agent: &str, messages: &[ChatMessage]) -> (String, Option<Flag>) {
    match model.chat(agent, messages) {
        Ok(out) => (out, None),
        Err(BackendError::EmptyCompletion) => (String::new(), Some(Flag::EmptyResponse)),
        Err(e) => {
            log::warn!("{agent}: {e}");
            (
                String::new(),
                Some(Flag::BackendFailure {
                    message: e.to_string(),
                }),
            )
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))
}

/// Evaluates every point independently against the reference history.
/// The model is called with the point id as agent tag. Backend failures are
/// recorded per point; embedder failures abort. `jobs == 0` uses all cores.
pub fn run_eval(
    model: &dyn ChatBackend,
    dataset: &EMTestDataset,
    embedder: &dyn Embedder,
    jobs: usize,
) -> Result<Vec<PointResult>, EvalError> {
    let points: Vec<_> = dataset.points().collect();
    let mut results = pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|(inst, p)| {
                let (output, flag) = ask(model, &p.id, &point_messages(inst, p));
                let flag = match flag {
                    None if output.trim().is_empty() => Some(Flag::EmptyResponse),
                    f => f,
                };
                Ok(PointResult {
                    point_id: p.id.clone(),
                    similarity: similarity(&output, &p.reference_answer, embedder)?,
                    model_output: output,
                    keyword_pass: None,
                    human_score: None,
                    span: p.span,
                    difficulty: p.difficulty,
                    flag,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()
    })?;
    results.sort_by(|a, b| a.point_id.cmp(&b.point_id));
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordResult {
    pub index: usize,
    pub family: temporal_qa::Family,
    pub horizon: Horizon,
    pub model_output: String,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<Flag>,
}

/// Agent tag used for the `index`-th QA item.
pub fn qa_agent(index: usize) -> String {
    format!("qa-{index}")
}

/// Item turns with the observation inserted just before the question.
pub fn qa_messages(item: &QAItem) -> Vec<ChatMessage> {
    let mut messages: Vec<ChatMessage> = item
        .turns
        .iter()
        .map(|t| ChatMessage::new(t.role, t.content.clone()))
        .collect();
    let question = messages.pop();
    messages.push(ChatMessage::observation(calendar::format_timestamp(
        &item.observation,
    )));
    messages.extend(question);
    messages
}

pub fn run_keyword_eval(
    model: &dyn ChatBackend,
    items: &[QAItem],
    jobs: usize,
) -> Result<Vec<KeywordResult>, EvalError> {
    pool(jobs)?.install(|| {
        Ok(items
            .par_iter()
            .enumerate()
            .map(|(index, item)| {
                let (output, flag) = ask(model, &qa_agent(index), &qa_messages(item));
                KeywordResult {
                    index,
                    family: item.family,
                    horizon: item.horizon,
                    pass: temporal_qa::grade(&output, item),
                    model_output: output,
                    flag,
                }
            })
            .collect())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PassRate {
    pub passed: usize,
    pub total: usize,
}

impl PassRate {
    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.passed as f64 / self.total as f64)
    }

    fn add(&mut self, pass: bool) {
        self.total += 1;
        self.passed += usize::from(pass);
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeywordReport {
    pub short: PassRate,
    pub long: PassRate,
    pub overall: PassRate,
}

impl KeywordReport {
    pub fn from_results(results: &[KeywordResult]) -> Self {
        let mut r = KeywordReport::default();
        for k in results {
            match k.horizon {
                Horizon::Short => r.short.add(k.pass),
                Horizon::Long => r.long.add(k.pass),
            }
            r.overall.add(k.pass);
        }
        r
    }

    /// `Models | Short-term | Long-term | Overall` table of pass percentages.
    pub fn render(rows: &[(&str, &KeywordReport)]) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>10} {:>10}\n",
            "Models", "Short-term", "Long-term", "Overall"
        );
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10}",
                name,
                show(r.short.percent()),
                show(r.long.percent()),
                show(r.overall.percent())
            );
        }
        out
    }
}

/// Half-up rounding to one decimal place, for display.
pub fn round1(x: f64) -> f64 {
    ((x * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", round1(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub count: usize,
    /// Raw (unrounded) mean; `None` when empty.
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl CellStat {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return CellStat {
                count: 0,
                mean: None,
                min: None,
                max: None,
            };
        }
        CellStat {
            count: values.len(),
            mean: Some(values.iter().sum::<f64>() / values.len() as f64),
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
        }
    }

    pub fn display_mean(&self) -> Option<f64> {
        self.mean.map(round1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub span: SpanLabel,
    pub difficulty: Difficulty,
    #[serde(flatten)]
    pub stat: CellStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOverall {
    pub difficulty: Difficulty,
    #[serde(flatten)]
    pub stat: CellStat,
}

/// Mean scores per (span, difficulty) and per difficulty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<ReportCell>,
    pub overall: Vec<ReportOverall>,
}

impl Report {
    pub fn cell(&self, span: SpanLabel, difficulty: Difficulty) -> Option<&CellStat> {
        self.cells
            .iter()
            .find(|c| c.span == span && c.difficulty == difficulty)
            .map(|c| &c.stat)
    }

    pub fn overall(&self, difficulty: Difficulty) -> Option<&CellStat> {
        self.overall
            .iter()
            .find(|o| o.difficulty == difficulty)
            .map(|o| &o.stat)
    }

    pub fn count(&self) -> usize {
        self.overall.iter().map(|o| o.stat.count).sum()
    }

    pub fn has_spans(&self) -> bool {
        !self.cells.is_empty()
    }
}

fn aggregate_by(results: &[PointResult], value: impl Fn(&PointResult) -> Option<f64>) -> Report {
    let mut cells: BTreeMap<(SpanLabel, Difficulty), Vec<f64>> = BTreeMap::new();
    let mut overall: BTreeMap<Difficulty, Vec<f64>> = BTreeMap::new();
    for r in results {
        let Some(v) = value(r) else { continue };
        overall.entry(r.difficulty).or_default().push(v);
        if let Some(span) = r.span {
            cells.entry((span, r.difficulty)).or_default().push(v);
        }
    }
    Report {
        cells: cells
            .into_iter()
            .map(|((span, difficulty), v)| ReportCell {
                span,
                difficulty,
                stat: CellStat::of(&v),
            })
            .collect(),
        overall: overall
            .into_iter()
            .map(|(difficulty, v)| ReportOverall {
                difficulty,
                stat: CellStat::of(&v),
            })
            .collect(),
    }
}

/// Similarity report. Flagged results count with their score of 0.
pub fn aggregate(results: &[PointResult]) -> Report {
    aggregate_by(results, |r| Some(r.similarity))
}

/// Human-score report over results that carry a score.
pub fn aggregate_human(results: &[PointResult]) -> Report {
    aggregate_by(results, |r| r.human_score)
}

/// Comparison table: one row per model, grouped by difficulty, with an
/// Overall column and one column per span (or just Overall when no
/// result carries a span). A mean row follows each group when there are
/// several models.
pub fn render_table(rows: &[(&str, &Report)]) -> String {
    let spans = rows.iter().any(|(_, r)| r.has_spans());
    let mut out = String::new();
    let mut header = format!("{:<24} {:>7}", "Models", "Overall");
    if spans {
        for s in SpanLabel::ALL {
            let _ = write!(header, " {:>5}", s.abbrev());
        }
    }
    out.push_str(header.trim_end());
    out.push('\n');
    for d in Difficulty::ALL {
        let _ = writeln!(out, "-- {} --", d.name());
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); 1 + SpanLabel::ALL.len()];
        for (name, report) in rows {
            let mut values = vec![report.overall(d).and_then(|s| s.mean)];
            if spans {
                values.extend(
                    SpanLabel::ALL
                        .iter()
                        .map(|s| report.cell(*s, d).and_then(|c| c.mean)),
                );
            }
            for (col, v) in columns.iter_mut().zip(&values) {
                col.extend(v.map(round1));
            }
            out.push_str(&table_row(name, &values));
        }
        if rows.len() > 1 {
            let n = if spans { columns.len() } else { 1 };
            let means: Vec<Option<f64>> = columns[..n]
                .iter()
                .map(|c| (!c.is_empty()).then(|| c.iter().sum::<f64>() / c.len() as f64))
                .collect();
            out.push_str(&table_row(&format!("Mean Value ({})", d.name()), &means));
        }
    }
    out
}

fn table_row(name: &str, values: &[Option<f64>]) -> String {
    let mut line = format!("{name:<24}");
    for (i, v) in values.iter().enumerate() {
        let width = if i == 0 { 7 } else { 5 };
        let _ = write!(line, " {:>width$}", show(*v));
    }
    line.push('\n');
    line
}

/// A human rating for one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScore {
    pub point_id: String,
    pub score: f64,
}

/// Copies human scores onto results; every score must name a known point.
pub fn attach_human_scores(
    results: &mut [PointResult],
    scores: &[HumanScore],
) -> Result<(), EvalError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, r) in results.iter().enumerate() {
        index.insert(r.point_id.as_str(), i);
    }
    let mut updates = Vec::with_capacity(scores.len());
    for s in scores {
        if !(HUMAN_SCALE.0..=HUMAN_SCALE.1).contains(&s.score) {
            return Err(EvalError::HumanScore {
                point_id: s.point_id.clone(),
                score: s.score,
            });
        }
        let i = *index
            .get(s.point_id.as_str())
            .ok_or_else(|| EvalError::Join(format!("no result for point {}", s.point_id)))?;
        updates.push((i, s.score));
    }
    for (i, score) in updates {
        results[i].human_score = Some(score);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub difficulty: Difficulty,
    pub pairs: usize,
    pub r: f64,
    pub label: CorrelationLabel,
}

/// Joins human scores to results by point id and correlates them per
/// difficulty level. Levels with no scored points are skipped.
pub fn correlate_results(
    results: &[PointResult],
    scores: &[HumanScore],
) -> Result<Vec<Correlation>, EvalError> {
    let mut joined = results.to_vec();
    attach_human_scores(&mut joined, scores)?;
    let mut out = Vec::new();
    for d in Difficulty::ALL {
        let (human, sim): (Vec<f64>, Vec<f64>) = joined
            .iter()
            .filter(|r| r.difficulty == d)
            .filter_map(|r| r.human_score.map(|h| (h, r.similarity)))
            .unzip();
        if human.is_empty() {
            continue;
        }
        let (r, label) = correlate(&human, &sim)?;
        out.push(Correlation {
            difficulty: d,
            pairs: human.len(),
            r,
            label,
        });
    }
    if out.is_empty() {
        return Err(EvalError::Join("no scored results".into()));
    }
    Ok(out)
}
