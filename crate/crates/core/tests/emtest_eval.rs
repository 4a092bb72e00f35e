//! Shipped benchmark fixtures, statistics and evaluation runs.

use std::path::PathBuf;

use emkit::backends::{
    BackendError, Embedder, EmbeddingVector, HashEmbedder, ReplyScript, Role, ScriptedChat,
};
use emkit::emtest::{self, Counts, Difficulty, EMTestDataset, SpanLabel, SpanWindows, Variant};
use emkit::eval::{self, EvalError, Flag};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn load(name: &str) -> EMTestDataset {
    emtest::load_dataset(&fixture(name)).unwrap()
}

/// A model that answers each point with the given function of the point.
fn model(ds: &EMTestDataset, reply: impl Fn(&emtest::TestPoint) -> String) -> ScriptedChat {
    let mut script = ReplyScript::default();
    for (_, p) in ds.points() {
        script.replies.insert(p.id.clone(), vec![reply(p)]);
    }
    ScriptedChat::new(script)
}

#[test]
fn table_fixture_reproduces_counts() {
    let table = emtest::stats(&load("emtest_table.jsonl"));
    let expected = [
        (SpanLabel::JustNow, 18, 7),
        (SpanLabel::OneDay, 5, 5),
        (SpanLabel::FewDays, 10, 8),
        (SpanLabel::OneMonth, 4, 4),
        (SpanLabel::FewMonths, 4, 7),
        (SpanLabel::OneYear, 5, 4),
        (SpanLabel::FewYears, 7, 9),
        (SpanLabel::SeveralDecades, 4, 5),
    ];
    for (span, easy, hard) in expected {
        assert_eq!(table.row(span), Counts { easy, hard }, "{span}");
    }
    assert_eq!(table.overall, Counts { easy: 57, hard: 49 });
    assert_eq!(table.overall.total(), 106);
    let summed: usize = table.rows.iter().map(|(_, c)| c.total()).sum();
    assert_eq!(summed, 106);
    assert!(table
        .to_string()
        .contains("just now            18     7     25"));
}

#[test]
fn without_time_fixture_counts() {
    let ds = load("emtest_without_time.jsonl");
    assert_eq!(ds.variant, Variant::WithoutTime);
    let table = emtest::stats(&ds);
    assert!(table.rows.is_empty());
    assert_eq!(table.overall, Counts { easy: 89, hard: 34 });
    assert_eq!(ds.point_count(), 123);
}

#[test]
fn authored_fixture_covers_every_cell_and_lints_clean() {
    let ds = load("emtest_authored.jsonl");
    let table = emtest::stats(&ds);
    for (span, c) in &table.rows {
        assert!(c.easy >= 2 && c.hard >= 2, "{span}: {c:?}");
    }
    let warnings = emtest::lint_spans(&ds, &SpanWindows::default());
    assert!(warnings.is_empty(), "{warnings:?}");
}

#[test]
fn save_load_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "emtest_authored.jsonl",
        "emtest_table.jsonl",
        "emtest_without_time.jsonl",
    ] {
        let original = std::fs::read_to_string(fixture(name)).unwrap();
        let ds = EMTestDataset::parse(&original).unwrap();
        let out = dir.path().join(name);
        emtest::save_dataset(&out, &ds).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), original, "{name}");
        assert_eq!(emtest::load_dataset(&out).unwrap(), ds);
    }
}

#[test]
fn echo_model_scores_100_and_never_sees_references() {
    let ds = load("emtest_authored.jsonl");
    let chat = model(&ds, |p| p.reference_answer.clone());
    let results = eval::run_eval(&chat, &ds, &HashEmbedder, 4).unwrap();
    assert_eq!(results.len(), ds.point_count());
    for r in &results {
        assert!((r.similarity - 100.0).abs() < 1e-6, "{r:?}");
        assert!(r.flag.is_none());
    }
    let report = eval::aggregate(&results);
    assert_eq!(
        report.overall(Difficulty::Easy).unwrap().display_mean(),
        Some(100.0)
    );

    let references: Vec<&str> = ds
        .points()
        .map(|(_, p)| p.reference_answer.as_str())
        .collect();
    for (agent, messages) in chat.transcript() {
        let last = messages.last().unwrap();
        assert_eq!(last.role, Role::User);
        assert_eq!(
            messages[messages.len() - 2].role,
            Role::Observation,
            "{agent}"
        );
        for m in &messages {
            assert!(
                !references.iter().any(|r| m.content.contains(r)),
                "{agent} saw a reference"
            );
        }
    }
}

#[test]
fn results_are_ordered_and_reproducible() {
    let ds = load("emtest_table.jsonl");
    let run = |jobs| {
        let chat = model(&ds, |p| format!("I think it was {}", p.id));
        eval::run_eval(&chat, &ds, &HashEmbedder, jobs).unwrap()
    };
    let a = run(1);
    let b = run(8);
    assert_eq!(a, b);
    let ids: Vec<&str> = a.iter().map(|r| r.point_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn empty_answers_score_zero_and_are_flagged() {
    let ds = load("emtest_table.jsonl");
    let chat = model(&ds, |_| String::new());
    let results = eval::run_eval(&chat, &ds, &HashEmbedder, 2).unwrap();
    assert!(results
        .iter()
        .all(|r| r.similarity == 0.0 && r.flag == Some(Flag::EmptyResponse)));
}

#[test]
fn without_time_sends_no_observation() {
    let ds = load("emtest_without_time.jsonl");
    let chat = model(&ds, |p| p.reference_answer.clone());
    let results = eval::run_eval(&chat, &ds, &HashEmbedder, 2).unwrap();
    let report = eval::aggregate(&results);
    assert!(!report.has_spans());
    assert_eq!(report.overall(Difficulty::Hard).unwrap().count, 34);
    for (_, messages) in chat.transcript() {
        assert!(messages.iter().all(|m| m.role != Role::Observation));
    }
    let table = eval::render_table(&[("echo", &report)]);
    assert!(!table.contains("JN"));
}

#[test]
fn backend_failures_are_flagged_per_point() {
    let ds = load("emtest_authored.jsonl");
    let mut script = ReplyScript::default();
    let first = ds.points().next().unwrap().1;
    script
        .replies
        .insert(first.id.clone(), vec![first.reference_answer.clone()]);
    let chat = ScriptedChat::new(script);
    let results = eval::run_eval(&chat, &ds, &HashEmbedder, 2).unwrap();
    let failed = results
        .iter()
        .filter(|r| matches!(r.flag, Some(Flag::BackendFailure { .. })))
        .count();
    assert_eq!(failed, ds.point_count() - 1);
}

struct Broken;

impl Embedder for Broken {
    fn embed_text(&self, _: &str) -> Result<EmbeddingVector, BackendError> {
        Err(BackendError::Protocol("no embeddings today".into()))
    }
}

#[test]
fn embedder_failure_aborts() {
    let ds = load("emtest_table.jsonl");
    let chat = model(&ds, |p| p.reference_answer.clone());
    assert!(matches!(
        eval::run_eval(&chat, &ds, &Broken, 2),
        Err(EvalError::Embedding(_))
    ));
}
