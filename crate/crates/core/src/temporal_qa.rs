//! Synthetic temporal-reasoning QA data and keyword grading.
//!
//! Every answer is computed with [`crate::calendar`]; question and answer
//! wording comes from a few fixed templates per family. An item records the
//! instant it asks about (`query.target = query.anchor + query.offset`), so
//! its horizon and answer can be checked independently.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Role;
use crate::calendar::{
    self, month_abbrev, month_name, CalendarError, CivilDateTime, DateOffset, ElapsedBreakdown,
};
use crate::dialogue::Turn;

/// Queried instants within this many seconds of the observation are short-horizon.
pub const SHORT_HORIZON_SECS: i64 = 7 * 86_400;

/// Number of wording variants per family.
pub const VARIANTS: usize = 3;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

/// A set of alternatives; satisfied when any one of them occurs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeywordGroup(pub Vec<String>);

impl KeywordGroup {
    pub fn new<S: Into<String>>(alts: impl IntoIterator<Item = S>) -> Self {
        KeywordGroup(alts.into_iter().map(Into::into).collect())
    }

    pub fn alternatives(&self) -> &[String] {
        &self.0
    }

    pub fn is_satisfied_by(&self, response: &str) -> bool {
        self.0.iter().any(|alt| alternative_matches(response, alt))
    }
}

impl fmt::Display for KeywordGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{}\"", self.0.join("|"))
    }
}

/// Alternatives containing letters match as case-insensitive substrings.
/// Others (digits and punctuation) must not touch a digit on either side,
/// so "3" matches "3rd" and "1581-9-3" but "1581" does not match "15810".
fn alternative_matches(response: &str, alt: &str) -> bool {
    if alt.is_empty() {
        return false;
    }
    if alt.chars().any(char::is_alphabetic) {
        return response.to_lowercase().contains(&alt.to_lowercase());
    }
    response.match_indices(alt).any(|(i, m)| {
        let before = response[..i].chars().next_back();
        let after = response[i + m.len()..].chars().next();
        !before.is_some_and(|c| c.is_ascii_digit()) && !after.is_some_and(|c| c.is_ascii_digit())
    })
}

/// True iff every group is satisfied.
pub fn grade_keywords(response: &str, keywords: &[KeywordGroup]) -> bool {
    keywords.iter().all(|g| g.is_satisfied_by(response))
}

pub fn grade(response: &str, item: &QAItem) -> bool {
    grade_keywords(response, &item.keywords)
}

/// Compact text column, e.g. `"1581", "9|Sep|September", "3"`.
pub fn keywords_compact(keywords: &[KeywordGroup]) -> String {
    keywords
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    /// Year, month and day.
    Ymd,
    /// Year and month.
    Ym,
    /// Year only.
    Year,
    WeekdayOnly,
    /// Weekday name followed by year, month and day.
    WeekdayYmd,
}

pub fn keywords_for_date(d: &CivilDateTime, granularity: Granularity) -> Vec<KeywordGroup> {
    let year = KeywordGroup::new([d.year().to_string()]);
    let month = KeywordGroup::new([
        d.month().to_string(),
        month_abbrev(d.month()).to_string(),
        month_name(d.month()).to_string(),
    ]);
    let day = KeywordGroup::new([d.day().to_string()]);
    let weekday = KeywordGroup::new([d.weekday().name()]);
    match granularity {
        Granularity::Ymd => vec![year, month, day],
        Granularity::Ym => vec![year, month],
        Granularity::Year => vec![year],
        Granularity::WeekdayOnly => vec![weekday],
        Granularity::WeekdayYmd => vec![weekday, year, month, day],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Short,
    Long,
}

impl Horizon {
    pub fn between(a: &CivilDateTime, b: &CivilDateTime) -> Horizon {
        if (b.epoch_seconds() - a.epoch_seconds()).abs() <= SHORT_HORIZON_SECS {
            Horizon::Short
        } else {
            Horizon::Long
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    AbsoluteOffset,
    RelativeDay,
    WeekdayQuery,
    WeekendQuery,
    ElapsedSinceLastChat,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::AbsoluteOffset,
        Family::RelativeDay,
        Family::WeekdayQuery,
        Family::WeekendQuery,
        Family::ElapsedSinceLastChat,
    ];

    pub fn supports(self, horizon: Horizon) -> bool {
        !(self == Family::AbsoluteOffset && horizon == Horizon::Short)
    }
}

/// The instant a question asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub anchor: CivilDateTime,
    pub offset: DateOffset,
    pub target: CivilDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    /// Conversation ending with the question.
    pub turns: Vec<Turn>,
    /// Time at which the question is asked.
    pub observation: CivilDateTime,
    pub answer: String,
    pub keywords: Vec<KeywordGroup>,
    pub horizon: Horizon,
    pub family: Family,
    pub query: Query,
}

impl QAItem {
    pub fn question(&self) -> &str {
        self.turns.last().map(|t| t.content.as_str()).unwrap_or("")
    }

    /// Compact tab-separated line: family, horizon, observation, question, answer, keywords.
    pub fn to_tsv_row(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n'], " ");
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            serde_json::to_value(self.family)
                .unwrap()
                .as_str()
                .unwrap_or(""),
            serde_json::to_value(self.horizon)
                .unwrap()
                .as_str()
                .unwrap_or(""),
            self.observation,
            clean(self.question()),
            clean(&self.answer),
            keywords_compact(&self.keywords)
        )
    }
}

pub fn ordinal(n: u32) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// `2019-4-3`
fn ymd_plain(d: &CivilDateTime) -> String {
    format!("{}-{}-{}", d.year(), d.month(), d.day())
}

/// `Monday, July 5th, 2027`
fn long_date(d: &CivilDateTime) -> String {
    format!(
        "{}, {} {}, {}",
        d.weekday(),
        month_name(d.month()),
        ordinal(d.day()),
        d.year()
    )
}

/// `July 1st, 2023`
fn month_day_year(d: &CivilDateTime) -> String {
    format!(
        "{} {}, {}",
        month_name(d.month()),
        ordinal(d.day()),
        d.year()
    )
}

fn clock(d: &CivilDateTime) -> String {
    format!("{:02}:{:02}:{:02}", d.hour(), d.minute(), d.second())
}

fn plural(n: i64, unit: &str) -> String {
    if n == 1 {
        format!("1 {unit}")
    } else {
        format!("{n} {unit}s")
    }
}

fn join_and(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A relative reference to a day, e.g. "yesterday" or "432 years ago".
struct Relative {
    /// Adverbial form: "yesterday", "432 years ago", "in 3 days".
    phrase: String,
    /// Whether "today" may follow the phrase ("a year ago today").
    anniversary: bool,
    future: bool,
}

impl Relative {
    fn from_offset(offset: &DateOffset) -> Relative {
        let (n, unit) = if offset.years != 0 {
            (offset.years, "year")
        } else if offset.months != 0 {
            (offset.months, "month")
        } else {
            (offset.days, "day")
        };
        let future = n > 0;
        let mag = n.abs();
        let phrase = match (unit, n) {
            ("day", -1) => "yesterday".to_string(),
            ("day", -2) => "the day before yesterday".to_string(),
            ("day", 1) => "tomorrow".to_string(),
            ("day", 2) => "the day after tomorrow".to_string(),
            (_, _) if mag == 1 && future => format!("a {unit} from now"),
            (_, _) if mag == 1 => format!("a {unit} ago"),
            (_, _) if future => format!("in {}", plural(mag, unit)),
            _ => format!("{} ago", plural(mag, unit)),
        };
        Relative {
            anniversary: unit != "day" && !future,
            phrase,
            future,
        }
    }

    /// "a year ago today", "yesterday".
    fn with_today(&self) -> String {
        if self.anniversary {
            format!("{} today", self.phrase)
        } else {
            self.phrase.clone()
        }
    }

    fn be(&self) -> &'static str {
        if self.future {
            "will be"
        } else {
            "was"
        }
    }
}

fn question_turns(question: String) -> Vec<Turn> {
    vec![Turn::new(Role::User, question)]
}

fn build(
    family: Family,
    observation: CivilDateTime,
    anchor: CivilDateTime,
    offset: DateOffset,
    turns: Vec<Turn>,
    answer: String,
    keywords: Vec<KeywordGroup>,
) -> Result<QAItem, QaError> {
    let target = anchor.checked_add(&offset)?;
    Ok(QAItem {
        turns,
        observation,
        answer,
        keywords,
        horizon: Horizon::between(&observation, &target),
        family,
        query: Query {
            anchor,
            offset,
            target,
        },
    })
}

/// "What is the time 10 years and 6 months after June 1856?"
pub fn absolute_offset_item(
    observation: CivilDateTime,
    anchor_year: i64,
    anchor_month: u32,
    years: i64,
    months: i64,
    variant: usize,
) -> Result<QAItem, QaError> {
    if years < 0 || months < 0 || (years == 0 && months == 0) {
        return Err(QaError::Infeasible(
            "absolute offsets take a positive span".into(),
        ));
    }
    let anchor = CivilDateTime::from_ymd(anchor_year, anchor_month, 1)?;
    let mut parts = Vec::new();
    if years > 0 {
        parts.push(plural(years, "year"));
    }
    if months > 0 {
        parts.push(plural(months, "month"));
    }
    let span = join_and(&parts);
    let from = format!("{} {}", month_name(anchor_month), anchor_year);
    let before = variant % VARIANTS == 2;
    let offset = if before {
        DateOffset {
            years: -years,
            months: -months,
            ..Default::default()
        }
    } else {
        DateOffset {
            years,
            months,
            ..Default::default()
        }
    };
    let target = anchor.checked_add(&offset)?;
    let to_full = format!("{} {}", month_name(target.month()), target.year());
    let (question, answer) = match variant % VARIANTS {
        0 => (
            format!("What is the time {span} after {from}?"),
            format!(
                "The time is {}, {}",
                month_abbrev(target.month()),
                target.year()
            ),
        ),
        1 => (
            format!("Which month and year comes {span} after {from}?"),
            format!("{} after {from} it is {to_full}.", capitalize(&span)),
        ),
        _ => (
            format!("What month was it {span} before {from}?"),
            format!("{} before {from} it was {to_full}.", capitalize(&span)),
        ),
    };
    build(
        Family::AbsoluteOffset,
        observation,
        anchor,
        offset,
        question_turns(question),
        answer,
        keywords_for_date(&target, Granularity::Ym),
    )
}

/// "What was the date a year ago today?" The offset uses exactly one of
/// years, months or days.
pub fn relative_day_item(
    observation: CivilDateTime,
    offset: DateOffset,
    variant: usize,
) -> Result<QAItem, QaError> {
    let units = [offset.years, offset.months, offset.days]
        .iter()
        .filter(|n| **n != 0)
        .count();
    if units != 1 || offset.hours != 0 || offset.minutes != 0 || offset.seconds != 0 {
        return Err(QaError::Infeasible(
            "relative dates use a single non-zero year, month or day offset".into(),
        ));
    }
    let target = observation.checked_add(&offset)?;
    let rel = Relative::from_offset(&offset);
    let be = rel.be();
    let (question, answer) = match variant % VARIANTS {
        0 => (
            format!(
                "What {} the date {}?",
                if rel.future { "will" } else { "was" },
                rel.with_today()
            )
            .replace("will the date", "will the date be"),
            format!(
                "Today is {}, therefore {} should be {}.",
                ymd_plain(&observation),
                rel.with_today(),
                ymd_plain(&target)
            ),
        ),
        1 => (
            format!(
                "{}, which day {}?",
                capitalize(&rel.with_today()),
                if rel.future { "will it be" } else { "was it" }
            ),
            if rel.anniversary {
                format!("Today, {}, {be} {}.", rel.phrase, ymd_plain(&target))
            } else {
                format!("{} {be} {}.", capitalize(&rel.phrase), ymd_plain(&target))
            },
        ),
        _ => (
            format!("Can you tell me the date {}?", rel.with_today()),
            format!(
                "The date {} {be} {}.",
                rel.with_today(),
                month_day_year(&target)
            ),
        ),
    };
    build(
        Family::RelativeDay,
        observation,
        observation,
        offset,
        question_turns(question),
        answer,
        keywords_for_date(&target, Granularity::Ymd),
    )
}

/// "What day of the week was yesterday?"
pub fn weekday_item(
    observation: CivilDateTime,
    days: i64,
    variant: usize,
) -> Result<QAItem, QaError> {
    if days == 0 {
        return Err(QaError::Infeasible(
            "weekday questions need a day offset".into(),
        ));
    }
    let offset = DateOffset::days(days);
    let target = observation.checked_add(&offset)?;
    let rel = Relative::from_offset(&offset);
    let w = target.weekday();
    let (question, answer) = match (variant % VARIANTS, rel.future) {
        (0, false) => (
            format!("What day of the week was {}?", rel.phrase),
            format!("{} was {w}.", capitalize(&rel.phrase)),
        ),
        (0, true) => (
            format!("What day of the week will it be {}?", rel.phrase),
            format!("It will be {w} {}.", rel.phrase),
        ),
        (1, false) => (
            format!("Which weekday was it {}?", rel.phrase),
            format!("It was a {w} {}.", rel.phrase),
        ),
        (1, true) => (
            format!("Which weekday will it be {}?", rel.phrase),
            format!("It will be a {w} {}.", rel.phrase),
        ),
        (_, future) => (
            format!(
                "Do you know what day of the week {}?",
                if future {
                    format!("it will be {}", rel.phrase)
                } else {
                    format!("it was {}", rel.phrase)
                }
            ),
            format!(
                "{} {} a {w}, {}.",
                capitalize(&rel.phrase),
                rel.be(),
                month_day_year(&target)
            ),
        ),
    };
    build(
        Family::WeekdayQuery,
        observation,
        observation,
        offset,
        question_turns(question),
        answer,
        keywords_for_date(&target, Granularity::WeekdayOnly),
    )
}

/// "Will the day after tomorrow be a weekend?"
pub fn weekend_item(
    observation: CivilDateTime,
    days: i64,
    variant: usize,
) -> Result<QAItem, QaError> {
    if days == 0 {
        return Err(QaError::Infeasible(
            "weekend questions need a day offset".into(),
        ));
    }
    let offset = DateOffset::days(days);
    let target = observation.checked_add(&offset)?;
    let rel = Relative::from_offset(&offset);
    let question = match (variant % VARIANTS, rel.future) {
        (0, true) => format!("Will {} be a weekend?", rel.phrase),
        (0, false) => format!("Was {} a weekend?", rel.phrase),
        (1, true) => format!("Is {} going to fall on a weekend?", rel.phrase),
        (1, false) => format!("Did {} fall on a weekend?", rel.phrase),
        (_, true) => format!("Will it be Saturday or Sunday {}?", rel.phrase),
        (_, false) => format!("Was it Saturday or Sunday {}?", rel.phrase),
    };
    let yes_no = if target.is_weekend() { "Yes" } else { "No" };
    let answer = format!(
        "{yes_no}, {} {} {}.",
        rel.phrase,
        rel.be(),
        long_date(&target)
    );
    build(
        Family::WeekendQuery,
        observation,
        observation,
        offset,
        question_turns(question),
        answer,
        keywords_for_date(&target, Granularity::WeekdayYmd),
    )
}

/// Unrelated exchanges placed before an elapsed-time probe.
pub const FILLER_EXCHANGES: [(&str, &str); 4] = [
    (
        "How can I use PHP to compare two philosophical essays by word frequency?",
        "As an AI assistant, I can outline an approach: tokenize both texts, count words with array_count_values, and compare the most frequent terms.",
    ),
    (
        "Can you suggest a simple stretching routine for the morning?",
        "Sure. Try neck rolls, shoulder circles, a standing forward fold and a gentle spinal twist, about thirty seconds each.",
    ),
    (
        "Why is the sky blue?",
        "Sunlight scatters off air molecules, and shorter blue wavelengths scatter much more strongly than red ones.",
    ),
    (
        "What should I keep in mind when repotting a tomato seedling?",
        "Plant it a little deeper than before, water it well afterwards, and keep it out of harsh sun for a day or two.",
    ),
];

fn elapsed_phrase(e: &ElapsedBreakdown) -> (Vec<(u64, &'static str)>, bool) {
    if e.total_seconds < 3600 {
        (vec![(e.minutes, "minute")], true)
    } else if e.total_seconds < 86_400 {
        (vec![(e.hours, "hour"), (e.minutes, "minute")], false)
    } else {
        (
            vec![
                (e.years, "year"),
                (e.months, "month"),
                (e.days, "day"),
                (e.hours, "hour"),
            ],
            false,
        )
    }
}

/// "How long ago was our last chat?" after one filler exchange. Elapsed
/// time is rendered exactly, truncated to whole minutes.
pub fn elapsed_item(
    last_chat: CivilDateTime,
    observation: CivilDateTime,
    filler: usize,
    variant: usize,
) -> Result<QAItem, QaError> {
    let e = last_chat.elapsed_until(&observation);
    if e.total_seconds < 60 {
        return Err(QaError::Infeasible(
            "the probe must come at least a minute after the last chat".into(),
        ));
    }
    let (components, just_now) = elapsed_phrase(&e);
    let shown: Vec<(u64, &str)> = components.into_iter().filter(|(n, _)| *n > 0).collect();
    let words: Vec<String> = shown.iter().map(|(n, u)| plural(*n as i64, u)).collect();
    let span = join_and(&words);
    let answer = if just_now {
        format!(
            "Our last conversation was just now, {span} ago, at {}.",
            clock(&last_chat)
        )
    } else if e.total_seconds < 86_400 {
        format!(
            "Our last conversation was {span} ago, at {}.",
            clock(&last_chat)
        )
    } else {
        format!(
            "Our last conversation was {span} ago, on {} at {}.",
            long_date(&last_chat),
            clock(&last_chat)
        )
    };
    let keywords = shown
        .iter()
        .flat_map(|(n, u)| [KeywordGroup::new([n.to_string()]), KeywordGroup::new([*u])])
        .collect();
    let question = match variant % VARIANTS {
        0 => "How long ago was our last chat?",
        1 => "When did we last talk?",
        _ => "How much time has passed since we last spoke?",
    };
    let (fq, fa) = FILLER_EXCHANGES[filler % FILLER_EXCHANGES.len()];
    let turns = vec![
        Turn::new(Role::User, fq),
        Turn::new(Role::Observation, calendar::format_timestamp(&last_chat)),
        Turn::new(Role::Assistant, fa),
        Turn::new(Role::User, question),
    ];
    build(
        Family::ElapsedSinceLastChat,
        observation,
        observation,
        DateOffset::seconds(-e.total_seconds),
        turns,
        answer,
        keywords,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCount {
    pub family: Family,
    pub horizon: Horizon,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAConfig {
    pub counts: Vec<FamilyCount>,
    /// Years the observation instants are drawn from.
    pub year_range: (i64, i64),
    pub seed: u64,
}

impl QAConfig {
    /// 292 evaluation items: 32 short-horizon, 260 long-horizon.
    pub fn eval_preset(seed: u64) -> Self {
        let short = [
            Family::RelativeDay,
            Family::WeekdayQuery,
            Family::WeekendQuery,
            Family::ElapsedSinceLastChat,
        ];
        let mut counts: Vec<FamilyCount> = short
            .iter()
            .map(|&family| FamilyCount {
                family,
                horizon: Horizon::Short,
                count: 8,
            })
            .collect();
        counts.extend(Family::ALL.iter().map(|&family| FamilyCount {
            family,
            horizon: Horizon::Long,
            count: 52,
        }));
        QAConfig {
            counts,
            year_range: (2000, 2060),
            seed,
        }
    }

    /// 8,000 training items spread uniformly over the five families.
    pub fn train_preset(seed: u64) -> Self {
        let counts = Family::ALL
            .iter()
            .flat_map(|&family| {
                if family.supports(Horizon::Short) {
                    vec![
                        FamilyCount {
                            family,
                            horizon: Horizon::Short,
                            count: 800,
                        },
                        FamilyCount {
                            family,
                            horizon: Horizon::Long,
                            count: 800,
                        },
                    ]
                } else {
                    vec![FamilyCount {
                        family,
                        horizon: Horizon::Long,
                        count: 1600,
                    }]
                }
            })
            .collect();
        QAConfig {
            counts,
            year_range: (1990, 2060),
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.count).sum()
    }

    pub fn validate(&self) -> Result<(), QaError> {
        let (lo, hi) = self.year_range;
        if lo > hi {
            return Err(QaError::Config("year_range is reversed".into()));
        }
        if lo < 2 || hi > 9999 {
            return Err(QaError::Config(
                "year_range must lie within 2..=9999".into(),
            ));
        }
        for c in &self.counts {
            if c.count > 0 && !c.family.supports(c.horizon) {
                return Err(QaError::Infeasible(format!(
                    "{:?} questions cannot be {:?}-horizon",
                    c.family, c.horizon
                )));
            }
        }
        Ok(())
    }
}

fn sub_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn random_instant<R: Rng + ?Sized>(rng: &mut R, year_range: (i64, i64)) -> CivilDateTime {
    let lo = CivilDateTime::from_ymd(year_range.0, 1, 1)
        .expect("validated year")
        .epoch_seconds();
    let hi = CivilDateTime::new(year_range.1, 12, 31, 23, 59, 59)
        .expect("validated year")
        .epoch_seconds();
    CivilDateTime::from_epoch_seconds(rng.gen_range(lo..=hi)).expect("inside range")
}

fn signed<R: Rng + ?Sized>(rng: &mut R, magnitude: i64) -> i64 {
    if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

fn draw_item<R: Rng + ?Sized>(
    rng: &mut R,
    family: Family,
    horizon: Horizon,
    year_range: (i64, i64),
) -> Result<QAItem, QaError> {
    let observation = random_instant(rng, year_range);
    let variant = rng.gen_range(0..VARIANTS);
    let short = horizon == Horizon::Short;
    match family {
        Family::AbsoluteOffset => {
            let anchor_year = rng.gen_range((year_range.0 - 400).max(1)..=year_range.1);
            let years = rng.gen_range(0..=120);
            let months = if years == 0 {
                rng.gen_range(1..=11)
            } else {
                rng.gen_range(0..=11)
            };
            absolute_offset_item(
                observation,
                anchor_year,
                rng.gen_range(1..=12),
                years,
                months,
                variant,
            )
        }
        Family::RelativeDay => {
            let offset = if short {
                DateOffset::days({
                    let m = rng.gen_range(1..=7);
                    signed(rng, m)
                })
            } else {
                match rng.gen_range(0..3) {
                    0 => {
                        let max_back = (observation.year() - 1).min(500);
                        DateOffset::years(-rng.gen_range(1..=max_back))
                    }
                    1 => DateOffset::months({
                        let m = rng.gen_range(1..=36);
                        signed(rng, m)
                    }),
                    _ => DateOffset::days({
                        let m = rng.gen_range(8..=1000);
                        signed(rng, m)
                    }),
                }
            };
            relative_day_item(observation, offset, variant)
        }
        Family::WeekdayQuery | Family::WeekendQuery => {
            let days = if short {
                {
                    let m = rng.gen_range(1..=7);
                    signed(rng, m)
                }
            } else {
                {
                    let m = rng.gen_range(8..=1000);
                    signed(rng, m)
                }
            };
            if family == Family::WeekdayQuery {
                weekday_item(observation, days, variant)
            } else {
                weekend_item(observation, days, variant)
            }
        }
        Family::ElapsedSinceLastChat => {
            let gap = if short {
                rng.gen_range(60..=SHORT_HORIZON_SECS)
            } else {
                rng.gen_range(SHORT_HORIZON_SECS + 1..=3 * 365 * 86_400)
            };
            let last = observation.checked_add(&DateOffset::seconds(-gap))?;
            elapsed_item(
                last,
                observation,
                rng.gen_range(0..FILLER_EXCHANGES.len()),
                variant,
            )
        }
    }
}

/// Emits exactly the configured counts, in config order. Each
/// (family, horizon) entry draws from its own seeded stream, so entries are
/// generated in parallel without affecting the output.
pub fn synthesize(config: &QAConfig) -> Result<Vec<QAItem>, QaError> {
    config.validate()?;
    let batches: Vec<Vec<QAItem>> = config
        .counts
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, i));
            let mut out = Vec::with_capacity(c.count);
            let mut attempts = 0usize;
            while out.len() < c.count {
                attempts += 1;
                if attempts > c.count * 50 + 100 {
                    return Err(QaError::Infeasible(format!(
                        "could not draw {:?} {:?} items in range {:?}",
                        c.family, c.horizon, config.year_range
                    )));
                }
                let item = draw_item(&mut rng, c.family, c.horizon, config.year_range)?;
                // Absolute dates occasionally land near the observation; redraw.
                if item.horizon == c.horizon {
                    out.push(item);
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    Ok(batches.into_iter().flatten().collect())
}

/// Shuffles a dataset reproducibly (e.g. before splitting).
pub fn shuffled(items: &[QAItem], seed: u64) -> Vec<QAItem> {
    let mut out = items.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}
