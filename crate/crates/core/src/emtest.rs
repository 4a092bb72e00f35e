//! Episodic-memory benchmark datasets: model, loading, validation and
//! statistics.
//!
//! A dataset file holds one [`TestInstance`] per line:
//!
//! ```json
//! {"id":"i1","variant":"with_time","history":[{"role":"user","content":"..."}],
//!  "points":[{"id":"p1","position":3,"question":"...","observation":"...",
//!             "span":"just_now","difficulty":"easy","reference_answer":"..."}]}
//! ```
//!
//! Fields are written in exactly that order and absent optionals are
//! omitted, so `save(load(f)) == f` for canonical files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Role;
use crate::calendar::{self, CivilDateTime};
use crate::dialogue::{EMTrainRecord, Turn};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum EmTestError {
    #[error(transparent)]
    Data(#[from] JsonlError),
    #[error("line {line}: instance {instance}: {message}")]
    Invariant {
        line: usize,
        instance: String,
        message: String,
    },
    #[error("line {line}: variant {found:?} differs from {expected:?} on earlier lines")]
    MixedVariants {
        line: usize,
        expected: Variant,
        found: Variant,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanLabel {
    JustNow,
    OneDay,
    FewDays,
    OneMonth,
    FewMonths,
    OneYear,
    FewYears,
    SeveralDecades,
}

impl SpanLabel {
    pub const ALL: [SpanLabel; 8] = [
        SpanLabel::JustNow,
        SpanLabel::OneDay,
        SpanLabel::FewDays,
        SpanLabel::OneMonth,
        SpanLabel::FewMonths,
        SpanLabel::OneYear,
        SpanLabel::FewYears,
        SpanLabel::SeveralDecades,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpanLabel::JustNow => "just now",
            SpanLabel::OneDay => "one day",
            SpanLabel::FewDays => "few days",
            SpanLabel::OneMonth => "one month",
            SpanLabel::FewMonths => "few months",
            SpanLabel::OneYear => "one year",
            SpanLabel::FewYears => "few years",
            SpanLabel::SeveralDecades => "several decades",
        }
    }

    /// Two-letter column heading, e.g. `JN`.
    pub fn abbrev(self) -> &'static str {
        match self {
            SpanLabel::JustNow => "JN",
            SpanLabel::OneDay => "OD",
            SpanLabel::FewDays => "FD",
            SpanLabel::OneMonth => "OM",
            SpanLabel::FewMonths => "FM",
            SpanLabel::OneYear => "OY",
            SpanLabel::FewYears => "FY",
            SpanLabel::SeveralDecades => "SD",
        }
    }
}

impl fmt::Display for SpanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 2] = [Difficulty::Easy, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Hard => "Hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithTime,
    WithoutTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPoint {
    pub id: String,
    /// Number of history turns replayed before the question.
    pub position: usize,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<CivilDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<SpanLabel>,
    pub difficulty: Difficulty,
    pub reference_answer: String,
    /// Index of the history Observation turn the question is about; used
    /// only by the span linter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestInstance {
    pub id: String,
    pub variant: Variant,
    pub history: Vec<Turn>,
    pub points: Vec<TestPoint>,
}

impl TestInstance {
    /// Observation timestamps in history order, with their turn indices.
    pub fn timestamps(&self) -> Vec<(usize, CivilDateTime)> {
        self.history
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Observation)
            .filter_map(|(i, t)| calendar::parse_timestamp(&t.content).ok().map(|ts| (i, ts)))
            .collect()
    }

    /// Checks every structural invariant; the message names the offending point.
    pub fn validate(&self) -> Result<(), String> {
        let with_time = self.variant == Variant::WithTime;
        let expected: &[Role] = if with_time {
            &[Role::User, Role::Observation, Role::Assistant]
        } else {
            &[Role::User, Role::Assistant]
        };
        if !self.history.len().is_multiple_of(expected.len()) {
            return Err(format!(
                "history of {} turns is not a whole number of rounds",
                self.history.len()
            ));
        }
        let mut previous: Option<CivilDateTime> = None;
        for (i, turn) in self.history.iter().enumerate() {
            let want = expected[i % expected.len()];
            if turn.role != want {
                return Err(format!(
                    "turn {i} is {} where {} was expected",
                    turn.role, want
                ));
            }
            if turn.role == Role::Observation {
                let ts = calendar::parse_timestamp(&turn.content)
                    .map_err(|e| format!("turn {i}: {e}"))?;
                if previous.is_some_and(|p| p >= ts) {
                    return Err(format!("turn {i}: timestamps must strictly increase"));
                }
                previous = Some(ts);
            }
        }
        if self.points.is_empty() {
            return Err("instance has no test points".into());
        }
        let stamps = self.timestamps();
        for p in &self.points {
            let fail = |m: &str| Err(format!("point {}: {m}", p.id));
            if p.question.trim().is_empty() {
                return fail("question is empty");
            }
            if p.reference_answer.trim().is_empty() {
                return fail("reference_answer is empty");
            }
            if p.position > self.history.len() {
                return fail("position is past the end of the history");
            }
            match (with_time, p.observation, p.span) {
                (true, Some(obs), Some(_)) => {
                    let last = stamps.iter().rev().find(|(i, _)| *i < p.position);
                    if last.is_some_and(|(_, ts)| *ts > obs) {
                        return fail("observation precedes the preceding history timestamp");
                    }
                }
                (true, _, _) => return fail("with-time points need observation and span"),
                (false, None, None) => {}
                (false, _, _) => return fail("without-time points take no observation or span"),
            }
            if let Some(e) = p.evidence {
                if e >= p.position || self.history[e].role != Role::Observation {
                    return fail("evidence must index an earlier Observation turn");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EMTestDataset {
    pub variant: Variant,
    pub instances: Vec<TestInstance>,
}

impl EMTestDataset {
    pub fn points(&self) -> impl Iterator<Item = (&TestInstance, &TestPoint)> {
        self.instances
            .iter()
            .flat_map(|i| i.points.iter().map(move |p| (i, p)))
    }

    pub fn point_count(&self) -> usize {
        self.instances.iter().map(|i| i.points.len()).sum()
    }

    /// Validates each instance and the uniqueness of ids.
    pub fn validate(&self) -> Result<(), EmTestError> {
        let mut instance_ids = HashSet::new();
        let mut point_ids = HashSet::new();
        for (n, inst) in self.instances.iter().enumerate() {
            let err = |message: String| EmTestError::Invariant {
                line: n + 1,
                instance: inst.id.clone(),
                message,
            };
            if inst.variant != self.variant {
                return Err(EmTestError::MixedVariants {
                    line: n + 1,
                    expected: self.variant,
                    found: inst.variant,
                });
            }
            inst.validate().map_err(err)?;
            if !instance_ids.insert(inst.id.as_str()) {
                return Err(err("duplicate instance id".into()));
            }
            for p in &inst.points {
                if !point_ids.insert(p.id.as_str()) {
                    return Err(err(format!("duplicate point id {}", p.id)));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EmTestError> {
        let mut variant = None;
        let mut instances = Vec::new();
        for (line, l) in jsonl::numbered_lines(text) {
            let inst: TestInstance = serde_json::from_str(l).map_err(|e| JsonlError::Parse {
                line,
                message: e.to_string(),
            })?;
            let expected = *variant.get_or_insert(inst.variant);
            if inst.variant != expected {
                return Err(EmTestError::MixedVariants {
                    line,
                    expected,
                    found: inst.variant,
                });
            }
            inst.validate().map_err(|message| EmTestError::Invariant {
                line,
                instance: inst.id.clone(),
                message,
            })?;
            instances.push(inst);
        }
        let dataset = EMTestDataset {
            variant: variant.unwrap_or(Variant::WithTime),
            instances,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn to_jsonl(&self) -> String {
        jsonl::to_string(&self.instances)
    }
}

pub fn load_dataset(path: &Path) -> Result<EMTestDataset, EmTestError> {
    EMTestDataset::parse(&jsonl::read_to_string(path)?)
}

pub fn save_dataset(path: &Path, dataset: &EMTestDataset) -> Result<(), EmTestError> {
    Ok(jsonl::write_lines(path, &dataset.instances)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub easy: usize,
    pub hard: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.easy + self.hard
    }

    fn bump(&mut self, d: Difficulty) {
        match d {
            Difficulty::Easy => self.easy += 1,
            Difficulty::Hard => self.hard += 1,
        }
    }
}

/// Points per (span, difficulty), with totals. Without-time datasets carry
/// no span rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountTable {
    pub variant: Variant,
    pub rows: Vec<(SpanLabel, Counts)>,
    pub overall: Counts,
}

impl CountTable {
    pub fn row(&self, span: SpanLabel) -> Counts {
        self.rows
            .iter()
            .find(|(s, _)| *s == span)
            .map(|(_, c)| *c)
            .unwrap_or_default()
    }
}

impl fmt::Display for CountTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>5} {:>5} {:>6}",
            "Time Span", "Easy", "Hard", "Total"
        )?;
        for (span, c) in &self.rows {
            writeln!(
                f,
                "{:<16} {:>5} {:>5} {:>6}",
                span.name(),
                c.easy,
                c.hard,
                c.total()
            )?;
        }
        let o = &self.overall;
        writeln!(
            f,
            "{:<16} {:>5} {:>5} {:>6}",
            "Overall Number",
            o.easy,
            o.hard,
            o.total()
        )
    }
}

pub fn stats(dataset: &EMTestDataset) -> CountTable {
    let mut cells: BTreeMap<SpanLabel, Counts> = BTreeMap::new();
    let mut overall = Counts::default();
    for (_, p) in dataset.points() {
        overall.bump(p.difficulty);
        if let Some(span) = p.span {
            cells.entry(span).or_default().bump(p.difficulty);
        }
    }
    let rows = match dataset.variant {
        Variant::WithTime => SpanLabel::ALL
            .iter()
            .map(|s| (*s, cells.get(s).copied().unwrap_or_default()))
            .collect(),
        Variant::WithoutTime => Vec::new(),
    };
    CountTable {
        variant: dataset.variant,
        rows,
        overall,
    }
}

/// Plausible gaps, in seconds, between a point's observation and the
/// history timestamp it refers to. Windows may overlap; `max` of `None` is
/// unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanWindows {
    pub windows: Vec<SpanWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanWindow {
    pub span: SpanLabel,
    pub min_secs: i64,
    pub max_secs: Option<i64>,
}

const HOUR: i64 = 3600;
const DAY: i64 = 86_400;

impl Default for SpanWindows {
    fn default() -> Self {
        let w = |span, min_secs, max_secs| SpanWindow {
            span,
            min_secs,
            max_secs,
        };
        SpanWindows {
            windows: vec![
                w(SpanLabel::JustNow, 0, Some(HOUR)),
                w(SpanLabel::OneDay, HOUR, Some(2 * DAY)),
                w(SpanLabel::FewDays, DAY, Some(14 * DAY)),
                w(SpanLabel::OneMonth, 14 * DAY, Some(60 * DAY)),
                w(SpanLabel::FewMonths, 45 * DAY, Some(330 * DAY)),
                w(SpanLabel::OneYear, 300 * DAY, Some(550 * DAY)),
                w(SpanLabel::FewYears, 540 * DAY, Some(15 * 365 * DAY)),
                w(SpanLabel::SeveralDecades, 15 * 365 * DAY, None),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintWarning {
    pub point_id: String,
    pub span: SpanLabel,
    pub gap_secs: i64,
}

impl fmt::Display for LintWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "point {}: labelled {:?} but the gap is {} seconds",
            self.point_id,
            self.span.name(),
            self.gap_secs
        )
    }
}

/// Flags points whose labelled span disagrees with the gap between the
/// observation and the referenced (`evidence`) timestamp. Points without
/// evidence are not checked.
pub fn lint_spans(dataset: &EMTestDataset, windows: &SpanWindows) -> Vec<LintWarning> {
    let mut out = Vec::new();
    for (inst, p) in dataset.points() {
        let (Some(obs), Some(span), Some(e)) = (p.observation, p.span, p.evidence) else {
            continue;
        };
        let Ok(referenced) = calendar::parse_timestamp(&inst.history[e].content) else {
            continue;
        };
        let gap = obs.epoch_seconds() - referenced.epoch_seconds();
        let fits = windows
            .windows
            .iter()
            .filter(|w| w.span == span)
            .any(|w| gap >= w.min_secs && w.max_secs.is_none_or(|m| gap <= m));
        if !fits {
            out.push(LintWarning {
                point_id: p.id.clone(),
                span,
                gap_secs: gap,
            });
        }
    }
    out
}

/// Size summary of a generated dialogue corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub records: usize,
    pub mean_rounds: Option<f64>,
    pub mean_chars: Option<f64>,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        writeln!(f, "records:     {}", self.records)?;
        writeln!(f, "mean rounds: {}", show(self.mean_rounds))?;
        writeln!(f, "mean chars:  {}", show(self.mean_chars))
    }
}

pub fn corpus_stats<'a>(records: impl IntoIterator<Item = &'a EMTrainRecord>) -> CorpusSummary {
    let (mut n, mut rounds, mut chars) = (0usize, 0usize, 0usize);
    for r in records {
        n += 1;
        rounds += r.meta.round_count;
        chars += r.character_count();
    }
    let mean = |total: usize| (n > 0).then(|| total as f64 / n as f64);
    CorpusSummary {
        records: n,
        mean_rounds: mean(rounds),
        mean_chars: mean(chars),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INSTANCE: &str = r#"{"id":"i1","variant":"with_time","history":[{"role":"user","content":"I just adopted a cat named Miso."},{"role":"observation","content":"Monday, March 4, 2024, 09:15:00"},{"role":"assistant","content":"Congratulations on adopting Miso!"}],"points":[{"id":"p1","position":3,"question":"What is my cat called?","observation":"Monday, March 4, 2024, 09:40:00","span":"just_now","difficulty":"easy","reference_answer":"Your cat is called Miso.","evidence":1}]}"#;

    fn dataset() -> EMTestDataset {
        EMTestDataset::parse(INSTANCE).unwrap()
    }

    #[test]
    fn canonical_round_trip() {
        let ds = dataset();
        assert_eq!(ds.to_jsonl(), format!("{INSTANCE}\n"));
        assert_eq!(EMTestDataset::parse(&ds.to_jsonl()).unwrap(), ds);
    }

    #[test]
    fn without_time_rejects_span() {
        let line = r#"{"id":"w","variant":"without_time","history":[{"role":"user","content":"hi"},{"role":"assistant","content":"hello"}],"points":[{"id":"q","position":2,"question":"q?","span":"one_day","difficulty":"easy","reference_answer":"a"}]}"#;
        let err = EMTestDataset::parse(line).unwrap_err();
        assert!(
            matches!(err, EmTestError::Invariant { line: 1, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("point q"));
    }

    #[test]
    fn mixed_variants_are_rejected() {
        let other = r#"{"id":"w","variant":"without_time","history":[],"points":[{"id":"q","position":0,"question":"q?","difficulty":"hard","reference_answer":"a"}]}"#;
        let err = EMTestDataset::parse(&format!("{INSTANCE}\n{other}\n")).unwrap_err();
        assert!(matches!(err, EmTestError::MixedVariants { line: 2, .. }));
    }

    #[test]
    fn invariant_violations() {
        let early = INSTANCE.replace("09:40:00", "09:00:00");
        assert!(EMTestDataset::parse(&early).is_err());
        let past_end = INSTANCE.replace("\"position\":3", "\"position\":4");
        assert!(EMTestDataset::parse(&past_end).is_err());
        let empty_ref = INSTANCE.replace("Your cat is called Miso.", " ");
        assert!(EMTestDataset::parse(&empty_ref).is_err());
        let bad = EMTestDataset::parse("{\"id\":1}").unwrap_err();
        assert!(matches!(
            bad,
            EmTestError::Data(JsonlError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn stats_of_empty_and_single() {
        let empty = EMTestDataset::parse("").unwrap();
        let t = stats(&empty);
        assert_eq!(t.overall.total(), 0);
        assert!(t.rows.iter().all(|(_, c)| c.total() == 0));
        let t = stats(&dataset());
        assert_eq!(t.row(SpanLabel::JustNow), Counts { easy: 1, hard: 0 });
        assert_eq!(t.overall.total(), 1);
    }

    #[test]
    fn linter_uses_windows() {
        let ds = dataset();
        assert!(lint_spans(&ds, &SpanWindows::default()).is_empty());
        let late = EMTestDataset::parse(&INSTANCE.replace("09:40:00", "11:40:00")).unwrap();
        let warnings = lint_spans(&late, &SpanWindows::default());
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].gap_secs, 2 * 3600 + 25 * 60);
    }

    #[test]
    fn corpus_summary_of_nothing() {
        let s = corpus_stats(std::iter::empty());
        assert_eq!((s.records, s.mean_rounds, s.mean_chars), (0, None, None));
    }
}
