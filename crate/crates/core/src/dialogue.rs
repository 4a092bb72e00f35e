//! The two-agent generation loop and the user–observation–assistant
//! training serialization.
//!
//! Two histories are kept: the human agent's (seeded with the human prompt)
//! and the assistant agent's (seeded with the assistant prompt). Each round
//! the human speaks, a timestamp is drawn and appended as an observation,
//! and the assistant answers; every message goes to both histories. When a
//! farewell shows up or the round cap is reached, the assistant history
//! minus its seed prompt becomes the training record.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, Role};
use crate::calendar::{self, CalendarError, CivilDateTime, DateOffset};
use crate::persona::PromptPair;

pub const HUMAN_AGENT: &str = "human";
pub const ASSISTANT_AGENT: &str = "assistant";

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("backend failed after {} turn(s): {source}", partial.len())]
    Backend {
        partial: Box<History>,
        #[source]
        source: BackendError,
    },
    #[error("history does not start with the expected seed prompt: {0}")]
    Seed(String),
    #[error("record invariant violated: {0}")]
    Invariant(String),
    #[error("invalid time policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Turn {
            role,
            content: content.into(),
        }
    }
}

/// An ordered conversation; a turn's index is its position.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct History {
    turns: Vec<Turn>,
}

/// Whose view of the conversation is sent to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perspective {
    /// Roles as recorded.
    Assistant,
    /// User and assistant swapped, so the model speaks as the human.
    Human,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seeded(prompt: &str) -> Self {
        History {
            turns: vec![Turn::new(Role::System, prompt)],
        }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.turns.push(Turn::new(role, content));
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn messages(&self, perspective: Perspective) -> Vec<ChatMessage> {
        self.turns
            .iter()
            .map(|t| {
                let role = match (perspective, t.role) {
                    (Perspective::Human, Role::User) => Role::Assistant,
                    (Perspective::Human, Role::Assistant) => Role::User,
                    (_, role) => role,
                };
                ChatMessage::new(role, t.content.clone())
            })
            .collect()
    }
}

impl From<Vec<Turn>> for History {
    fn from(turns: Vec<Turn>) -> Self {
        History { turns }
    }
}

/// How far apart consecutive messages are placed in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimePolicy {
    pub session_continue_probability: f64,
    /// Gap in seconds between messages of one session.
    pub within_session_gap: (u64, u64),
    /// Gap in seconds between sessions.
    pub between_session_gap: (u64, u64),
    /// Window the conversation's starting instant is drawn from.
    pub start_window: (CivilDateTime, CivilDateTime),
}

impl Default for TimePolicy {
    fn default() -> Self {
        TimePolicy {
            session_continue_probability: 0.7,
            within_session_gap: (30, 30 * 60),
            between_session_gap: (6 * 3600, 400 * 86_400),
            start_window: (
                CivilDateTime::from_ymd(2000, 1, 1).expect("valid date"),
                CivilDateTime::new(2030, 12, 31, 23, 59, 59).expect("valid date"),
            ),
        }
    }
}

impl TimePolicy {
    pub fn validate(&self) -> Result<(), DialogueError> {
        let bad = |m: &str| Err(DialogueError::Policy(m.to_string()));
        let p = self.session_continue_probability;
        if !(0.0..=1.0).contains(&p) {
            return bad("session_continue_probability must lie in [0, 1]");
        }
        let (wmin, wmax) = self.within_session_gap;
        let (bmin, bmax) = self.between_session_gap;
        if wmin == 0 || bmin == 0 {
            return bad("gaps must be at least one second");
        }
        if wmin > wmax || bmin > bmax {
            return bad("gap ranges need min <= max");
        }
        if wmax >= bmin {
            return bad("within-session gaps must stay below between-session gaps");
        }
        if self.start_window.0 > self.start_window.1 {
            return bad("start window is reversed");
        }
        Ok(())
    }

    pub fn draw_start<R: Rng + ?Sized>(&self, rng: &mut R) -> CivilDateTime {
        let lo = self.start_window.0.epoch_seconds();
        let hi = self.start_window.1.epoch_seconds();
        CivilDateTime::from_epoch_seconds(rng.gen_range(lo..=hi))
            .expect("instant inside a valid window")
    }
}

/// Next message time: a within-session gap with the continue probability,
/// otherwise a between-session gap. Always strictly later than `current`.
pub fn random_next_time<R: Rng + ?Sized>(
    current: CivilDateTime,
    policy: &TimePolicy,
    rng: &mut R,
) -> Result<CivilDateTime, CalendarError> {
    let (lo, hi) = if rng.gen_bool(policy.session_continue_probability) {
        policy.within_session_gap
    } else {
        policy.between_session_gap
    };
    let gap = rng.gen_range(lo.max(1)..=hi.max(1));
    current.checked_add(&DateOffset::seconds(gap as i64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenLimits {
    pub max_rounds: usize,
    pub farewell_phrases: Vec<String>,
}

impl Default for GenLimits {
    fn default() -> Self {
        GenLimits {
            max_rounds: 60,
            farewell_phrases: vec!["goodbye".into(), "talk to you later".into()],
        }
    }
}

impl GenLimits {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if self.max_rounds == 0 {
            return Err(DialogueError::Policy("max_rounds must be >= 1".into()));
        }
        if self.farewell_phrases.iter().all(|p| p.trim().is_empty()) {
            return Err(DialogueError::Policy(
                "farewell phrase list is empty".into(),
            ));
        }
        Ok(())
    }

    pub fn mentions_farewell(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.farewell_phrases
            .iter()
            .map(|p| p.trim().to_lowercase())
            .any(|p| !p.is_empty() && lower.contains(&p))
    }
}

/// True when either latest message contains a farewell phrase
/// (case-insensitive) or `rounds` exceeds the cap.
pub fn stopping_met(
    latest_user: &str,
    latest_assistant: &str,
    rounds: usize,
    limits: &GenLimits,
) -> bool {
    rounds > limits.max_rounds
        || limits.mentions_farewell(latest_user)
        || limits.mentions_farewell(latest_assistant)
}

/// Returns the turns after the leading system seed, which must equal `seed`.
pub fn strip_seed(history: &History, seed: &str) -> Result<Vec<Turn>, DialogueError> {
    match history.turns().split_first() {
        Some((first, rest)) if first.role == Role::System && first.content == seed => {
            Ok(rest.to_vec())
        }
        Some((first, _)) if first.role == Role::System => {
            Err(DialogueError::Seed("seed text differs".into()))
        }
        Some((first, _)) => Err(DialogueError::Seed(format!(
            "first turn is {}, not system",
            first.role
        ))),
        None => Err(DialogueError::Seed("history is empty".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub character_id: String,
    pub plot_id: String,
    pub first_timestamp: CivilDateTime,
    pub last_timestamp: CivilDateTime,
    pub round_count: usize,
}

/// One generated dialogue, as written to the EM-Train file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EMTrainRecord {
    pub id: String,
    pub meta: RecordMeta,
    pub turns: Vec<Turn>,
}

/// Identifiers attached to a generated record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordLabels {
    pub id: String,
    pub character_id: String,
    pub plot_id: String,
}

impl EMTrainRecord {
    /// Checks the turn pattern, timestamps, counts and meta consistency.
    pub fn validate(&self, max_rounds: Option<usize>) -> Result<(), DialogueError> {
        let fail = |m: String| Err(DialogueError::Invariant(format!("record {}: {m}", self.id)));
        if self.turns.is_empty() || !self.turns.len().is_multiple_of(3) {
            return fail(format!(
                "{} turns is not a whole number of rounds",
                self.turns.len()
            ));
        }
        let mut previous: Option<CivilDateTime> = None;
        let mut first = None;
        for (i, chunk) in self.turns.chunks(3).enumerate() {
            let roles = [chunk[0].role, chunk[1].role, chunk[2].role];
            if roles != [Role::User, Role::Observation, Role::Assistant] {
                return fail(format!("round {i} has roles {roles:?}"));
            }
            let ts = match calendar::parse_timestamp(&chunk[1].content) {
                Ok(ts) => ts,
                Err(e) => return fail(format!("round {i} observation: {e}")),
            };
            if previous.is_some_and(|p| p >= ts) {
                return fail(format!("round {i} timestamp does not increase"));
            }
            first.get_or_insert(ts);
            previous = Some(ts);
        }
        let rounds = self.turns.len() / 3;
        if self.meta.round_count != rounds {
            return fail(format!(
                "meta says {} rounds, turns hold {rounds}",
                self.meta.round_count
            ));
        }
        if first != Some(self.meta.first_timestamp) || previous != Some(self.meta.last_timestamp) {
            return fail("meta timestamps disagree with turns".into());
        }
        if let Some(cap) = max_rounds {
            if rounds > cap {
                return fail(format!("{rounds} rounds exceed the cap of {cap}"));
            }
        }
        Ok(())
    }

    pub fn character_count(&self) -> usize {
        self.turns.iter().map(|t| t.content.chars().count()).sum()
    }
}

fn backend_err(history: &History, source: BackendError) -> DialogueError {
    DialogueError::Backend {
        partial: Box::new(history.clone()),
        source,
    }
}

/// Runs the two-agent loop until a farewell or the round cap.
pub fn generate_dialogue<R: Rng + ?Sized>(
    chat: &dyn ChatBackend,
    prompts: &PromptPair,
    policy: &TimePolicy,
    limits: &GenLimits,
    rng: &mut R,
    labels: &RecordLabels,
) -> Result<EMTrainRecord, DialogueError> {
    policy.validate()?;
    limits.validate()?;
    let mut human = History::seeded(&prompts.human_prompt);
    let mut assistant = History::seeded(&prompts.assistant_prompt);
    let mut time = policy.draw_start(rng);
    let mut rounds = 0usize;
    let mut stamps = Vec::new();

    loop {
        let answer_u = chat
            .chat(HUMAN_AGENT, &human.messages(Perspective::Human))
            .map_err(|e| backend_err(&assistant, e))?;
        time = random_next_time(time, policy, rng)?;
        stamps.push(time);
        let stamp = calendar::format_timestamp(&time);
        for h in [&mut human, &mut assistant] {
            h.push(Role::User, answer_u.clone());
            h.push(Role::Observation, stamp.clone());
        }
        let answer_a = chat
            .chat(ASSISTANT_AGENT, &assistant.messages(Perspective::Assistant))
            .map_err(|e| backend_err(&assistant, e))?;
        for h in [&mut human, &mut assistant] {
            h.push(Role::Assistant, answer_a.clone());
        }
        rounds += 1;
        // The cap is checked against the round that would start next.
        if stopping_met(&answer_u, &answer_a, rounds + 1, limits) {
            break;
        }
    }

    let turns = strip_seed(&assistant, &prompts.assistant_prompt)?;
    let seed = prompts.assistant_prompt.trim();
    if !seed.is_empty() && turns.iter().any(|t| t.content.contains(seed)) {
        return Err(DialogueError::Invariant(format!(
            "record {} repeats the assistant seed prompt",
            labels.id
        )));
    }
    let record = EMTrainRecord {
        id: labels.id.clone(),
        meta: RecordMeta {
            character_id: labels.character_id.clone(),
            plot_id: labels.plot_id.clone(),
            first_timestamp: stamps[0],
            last_timestamp: *stamps.last().expect("at least one round"),
            round_count: rounds,
        },
        turns,
    };
    record.validate(Some(limits.max_rounds))?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMessage {
    pub role: Role,
    pub content: String,
    /// Whether the turn contributes to the training loss.
    pub loss: bool,
}

/// A record flattened for fine-tuning; only assistant turns carry loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub messages: Vec<SampleMessage>,
}

impl TrainingSample {
    /// The turns with loss flags dropped.
    pub fn turns(&self) -> Vec<Turn> {
        self.messages
            .iter()
            .map(|m| Turn::new(m.role, m.content.clone()))
            .collect()
    }

    pub fn loss_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.loss).count()
    }
}

pub fn to_training_sample(record: &EMTrainRecord) -> TrainingSample {
    TrainingSample {
        messages: record
            .turns
            .iter()
            .map(|t| SampleMessage {
                role: t.role,
                content: t.content.clone(),
                loss: t.role == Role::Assistant,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedChat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prompts() -> PromptPair {
        PromptPair {
            human_prompt: "HUMAN SEED: play Li Ming".into(),
            assistant_prompt: "ASSISTANT SEED: be helpful".into(),
        }
    }

    fn labels() -> RecordLabels {
        RecordLabels {
            id: "rec-0".into(),
            character_id: "card-0".into(),
            plot_id: "plot-0".into(),
        }
    }

    fn scripted(human: &[&str], assistant: &[&str]) -> ScriptedChat {
        ScriptedChat::default()
            .with_agent(HUMAN_AGENT, human.iter().copied())
            .with_agent(ASSISTANT_AGENT, assistant.iter().copied())
    }

    #[test]
    fn next_time_is_strictly_later_and_in_range() {
        let policy = TimePolicy {
            session_continue_probability: 1.0,
            within_session_gap: (60, 900),
            ..Default::default()
        };
        let current = CivilDateTime::new(2006, 9, 4, 21, 42, 56).unwrap();
        let lo = CivilDateTime::new(2006, 9, 4, 21, 43, 56).unwrap();
        let hi = CivilDateTime::new(2006, 9, 4, 21, 57, 56).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let next = random_next_time(current, &policy, &mut rng).unwrap();
            assert!(next > current && lo <= next && next <= hi);
        }
    }

    #[test]
    fn next_time_sequence_is_deterministic() {
        let policy = TimePolicy::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut t = policy.draw_start(&mut rng);
            (0..50)
                .map(|_| {
                    t = random_next_time(t, &policy, &mut rng).unwrap();
                    t
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn policy_validation() {
        assert!(TimePolicy::default().validate().is_ok());
        let overlap = TimePolicy {
            within_session_gap: (30, 7 * 3600),
            ..Default::default()
        };
        assert!(overlap.validate().is_err());
        let prob = TimePolicy {
            session_continue_probability: 1.5,
            ..Default::default()
        };
        assert!(prob.validate().is_err());
        let reversed = TimePolicy {
            within_session_gap: (100, 50),
            ..Default::default()
        };
        assert!(reversed.validate().is_err());
    }

    #[test]
    fn stopping_examples() {
        let limits = GenLimits::default();
        assert!(stopping_met("See you!", "Goodbye, take care!", 12, &limits));
        assert!(stopping_met("ok, TALK TO YOU LATER", "sure", 3, &limits));
        assert!(stopping_met("hm", "ok", 61, &limits));
        assert!(!stopping_met("hm", "ok", 60, &limits));
        assert!(!stopping_met("hm", "ok", 5, &limits));
    }

    #[test]
    fn strip_seed_cases() {
        let mut h = History::seeded("P_a");
        h.push(Role::User, "u1");
        h.push(Role::Observation, "t1");
        h.push(Role::Assistant, "a1");
        let turns = strip_seed(&h, "P_a").unwrap();
        assert_eq!(turns.len(), 3);
        assert_eq!(turns[0], Turn::new(Role::User, "u1"));

        let no_system: History = vec![Turn::new(Role::User, "u1")].into();
        assert!(matches!(
            strip_seed(&no_system, "P_a"),
            Err(DialogueError::Seed(_))
        ));
        assert!(matches!(
            strip_seed(&h, "other"),
            Err(DialogueError::Seed(_))
        ));
        assert!(strip_seed(&History::new(), "P_a").is_err());
    }

    #[test]
    fn three_exchanges_then_goodbye() {
        let chat = scripted(
            &["hello", "I run daily", "remember that?", "goodbye now"],
            &["hi!", "noted", "yes", "bye, take care"],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = generate_dialogue(
            &chat,
            &prompts(),
            &TimePolicy::default(),
            &GenLimits::default(),
            &mut rng,
            &labels(),
        )
        .unwrap();
        assert_eq!(rec.meta.round_count, 4);
        assert_eq!(rec.turns.len(), 12);
        assert_eq!(rec.turns[0].role, Role::User);
        assert_eq!(rec.turns[11].content, "bye, take care");
    }

    #[test]
    fn round_cap_without_farewell() {
        let chat = ScriptedChat::single(std::iter::repeat_n("fine", 100));
        let limits = GenLimits {
            max_rounds: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rec = generate_dialogue(
            &chat,
            &prompts(),
            &TimePolicy::default(),
            &limits,
            &mut rng,
            &labels(),
        )
        .unwrap();
        assert_eq!(rec.meta.round_count, 5);
        rec.validate(Some(5)).unwrap();
    }

    #[test]
    fn human_sees_swapped_roles() {
        let chat = scripted(&["hello", "goodbye"], &["hi", "bye"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        generate_dialogue(
            &chat,
            &prompts(),
            &TimePolicy::default(),
            &GenLimits::default(),
            &mut rng,
            &labels(),
        )
        .unwrap();
        let calls = chat.transcript();
        let (agent, second_human) = &calls[2];
        assert_eq!(agent, HUMAN_AGENT);
        let roles: Vec<Role> = second_human.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [Role::System, Role::Assistant, Role::Observation, Role::User]
        );
        assert_eq!(second_human[0].content, prompts().human_prompt);
        let (agent, first_assistant) = &calls[1];
        assert_eq!(agent, ASSISTANT_AGENT);
        assert_eq!(first_assistant[0].content, prompts().assistant_prompt);
        assert_eq!(first_assistant[1].role, Role::User);
    }

    #[test]
    fn backend_failure_carries_partial_history() {
        let chat = scripted(&["hello", "more"], &["hi"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = generate_dialogue(
            &chat,
            &prompts(),
            &TimePolicy::default(),
            &GenLimits::default(),
            &mut rng,
            &labels(),
        )
        .unwrap_err();
        match err {
            DialogueError::Backend { partial, source } => {
                assert!(matches!(source, BackendError::Exhausted { .. }));
                assert_eq!(partial.len(), 1 + 3 + 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seed_leak_is_an_invariant_error() {
        let p = prompts();
        let chat = scripted(&["goodbye"], &[&p.assistant_prompt]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = generate_dialogue(
            &chat,
            &p,
            &TimePolicy::default(),
            &GenLimits::default(),
            &mut rng,
            &labels(),
        )
        .unwrap_err();
        assert!(matches!(err, DialogueError::Invariant(_)));
    }

    fn one_round() -> EMTrainRecord {
        let t = CivilDateTime::new(2006, 9, 4, 21, 42, 56).unwrap();
        EMTrainRecord {
            id: "r".into(),
            meta: RecordMeta {
                character_id: "c".into(),
                plot_id: "p".into(),
                first_timestamp: t,
                last_timestamp: t,
                round_count: 1,
            },
            turns: vec![
                Turn::new(Role::User, "u"),
                Turn::new(Role::Observation, t.to_string()),
                Turn::new(Role::Assistant, "a"),
            ],
        }
    }

    #[test]
    fn training_sample_flags() {
        let rec = one_round();
        let sample = to_training_sample(&rec);
        let flags: Vec<(Role, bool)> = sample.messages.iter().map(|m| (m.role, m.loss)).collect();
        assert_eq!(
            flags,
            [
                (Role::User, false),
                (Role::Observation, false),
                (Role::Assistant, true)
            ]
        );
        assert_eq!(sample.turns(), rec.turns);
    }

    #[test]
    fn wire_formats() {
        let rec = one_round();
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            line,
            r#"{"id":"r","meta":{"character_id":"c","plot_id":"p","first_timestamp":"Monday, September 4, 2006, 21:42:56","last_timestamp":"Monday, September 4, 2006, 21:42:56","round_count":1},"turns":[{"role":"user","content":"u"},{"role":"observation","content":"Monday, September 4, 2006, 21:42:56"},{"role":"assistant","content":"a"}]}"#
        );
        let sample = serde_json::to_string(&to_training_sample(&rec)).unwrap();
        assert_eq!(
            sample,
            r#"{"messages":[{"role":"user","content":"u","loss":false},{"role":"observation","content":"Monday, September 4, 2006, 21:42:56","loss":false},{"role":"assistant","content":"a","loss":true}]}"#
        );
    }

    #[test]
    fn record_validation_catches_violations() {
        let mut rec = one_round();
        rec.meta.round_count = 2;
        assert!(rec.validate(None).is_err());

        let mut rec = one_round();
        rec.turns.swap(0, 1);
        assert!(rec.validate(None).is_err());

        let mut rec = one_round();
        rec.turns[1].content = "not a time".into();
        assert!(rec.validate(None).is_err());

        let mut rec = one_round();
        rec.turns.extend(rec.turns.clone());
        rec.meta.round_count = 2;
        assert!(rec.validate(None).is_err(), "repeated timestamp must fail");
    }
}
