//! Character cards, plot sampling from the event library, and the prompt
//! pair that seeds each generated dialogue.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage};
use crate::jsonl;

/// Number of events in a plot, farewell included.
pub const PLOT_LEN: usize = 20;

const DEFAULT_EVENTS: &str = include_str!("../data/events.jsonl");
const DEFAULT_POOLS: &str = include_str!("../data/pools.jsonl");
const DEFAULT_HUMAN_TEMPLATE: &str = include_str!("../data/templates/human.txt");
const DEFAULT_ASSISTANT_TEMPLATE: &str = include_str!("../data/templates/assistant.txt");

/// Default hint the assistant is told to ask about proactively.
pub const DEFAULT_COMMON_HINT: &str = "name, old, hobby, gender";

/// Agent tag used when asking a backend for social relationships.
pub const PERSONA_AGENT: &str = "persona";

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("attribute pool {0:?} is missing or empty")]
    EmptyPool(String),
    #[error("age pool value {0:?} is not a positive integer")]
    BadAge(String),
    #[error("backend failed while writing social relationships for {}: {source}", partial.name)]
    Backend {
        partial: Box<CharacterCard>,
        #[source]
        source: BackendError,
    },
    #[error("event library has {available} usable {kind} event(s), plot mix needs {needed}")]
    LibraryTooSmall {
        kind: EventKind,
        needed: usize,
        available: usize,
    },
    #[error("plot mix must total 19 non-farewell events, got {0}")]
    BadMix(usize),
    #[error("invalid event library: {0}")]
    InvalidLibrary(String),
    #[error("invalid plot: {0}")]
    InvalidPlot(String),
    #[error("invalid character card: {0}")]
    InvalidCard(String),
    #[error(transparent)]
    Data(#[from] jsonl::JsonlError),
    #[error("cannot read template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterCard {
    pub name: String,
    pub occupation: String,
    pub age: u32,
    pub gender: String,
    pub hobbies: Vec<String>,
    pub personality: Vec<String>,
    pub social_relationships: String,
}

impl CharacterCard {
    pub fn validate(&self) -> Result<(), PersonaError> {
        let blank = |s: &str| s.trim().is_empty();
        let missing = [
            ("name", blank(&self.name)),
            ("occupation", blank(&self.occupation)),
            ("age", self.age == 0),
            ("gender", blank(&self.gender)),
            (
                "hobbies",
                self.hobbies.is_empty() || self.hobbies.iter().any(|h| blank(h)),
            ),
            (
                "personality",
                self.personality.is_empty() || self.personality.iter().any(|p| blank(p)),
            ),
            ("social_relationships", blank(&self.social_relationships)),
        ];
        match missing.iter().find(|(_, bad)| *bad) {
            Some((field, _)) => Err(PersonaError::InvalidCard(format!("{field} is empty"))),
            None => Ok(()),
        }
    }

    /// One attribute per line, as embedded in the human prompt.
    pub fn render(&self) -> String {
        format!(
            "Name: {}\nOccupation: {}\nAge: {}\nGender: {}\nHobbies: {}\nPersonality: {}\nSocial Relationships: {}",
            self.name,
            self.occupation,
            self.age,
            self.gender,
            self.hobbies.join(", "),
            self.personality.join(", "),
            self.social_relationships
        )
    }
}

/// A persona file line: a card plus its identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRecord {
    pub id: String,
    #[serde(flatten)]
    pub card: CharacterCard,
}

/// Value pools for the six randomly drawn card attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributePools {
    pools: HashMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoolRecord {
    attribute: String,
    values: Vec<String>,
}

impl AttributePools {
    pub const ATTRIBUTES: [&'static str; 6] = [
        "name",
        "occupation",
        "age",
        "gender",
        "hobbies",
        "personality",
    ];

    pub fn parse(text: &str) -> Result<Self, PersonaError> {
        let records: Vec<PoolRecord> = jsonl::parse_lines(text)?;
        let mut pools: HashMap<String, Vec<String>> = HashMap::new();
        for r in records {
            pools.entry(r.attribute).or_default().extend(r.values);
        }
        let this = AttributePools { pools };
        this.validate()?;
        Ok(this)
    }

    pub fn load(path: &Path) -> Result<Self, PersonaError> {
        Self::parse(&jsonl::read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_POOLS).expect("built-in pools are valid")
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        for attr in Self::ATTRIBUTES {
            if self.values(attr).is_empty() {
                return Err(PersonaError::EmptyPool(attr.to_string()));
            }
        }
        for age in self.values("age") {
            match age.trim().parse::<u32>() {
                Ok(n) if n > 0 => {}
                _ => return Err(PersonaError::BadAge(age.clone())),
            }
        }
        Ok(())
    }

    pub fn values(&self, attribute: &str) -> &[String] {
        self.pools.get(attribute).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn pick<R: Rng + ?Sized>(
    rng: &mut R,
    pools: &AttributePools,
    attr: &str,
) -> Result<String, PersonaError> {
    pools
        .values(attr)
        .choose(rng)
        .cloned()
        .ok_or_else(|| PersonaError::EmptyPool(attr.to_string()))
}

fn pick_several<R: Rng + ?Sized>(
    rng: &mut R,
    pools: &AttributePools,
    attr: &str,
    n: usize,
) -> Result<Vec<String>, PersonaError> {
    let values = pools.values(attr);
    if values.is_empty() {
        return Err(PersonaError::EmptyPool(attr.to_string()));
    }
    Ok(values
        .choose_multiple(rng, n.min(values.len()))
        .cloned()
        .collect())
}

/// Deterministic stand-in used when no backend writes the relationships.
pub fn template_relationships(card: &CharacterCard) -> String {
    let circle = match card.age {
        0..=17 => "lives with their parents and is close to a grandparent",
        18..=29 => "keeps in touch with family and shares a flat with a friend",
        30..=59 => "has a partner, a few close friends, and colleagues they trust",
        _ => "is close to their grown children and an old circle of friends",
    };
    format!(
        "{} {}; friends know them as {} and often join them for {}.",
        card.name,
        circle,
        card.personality.join(" and "),
        card.hobbies.first().map(String::as_str).unwrap_or("a walk")
    )
}

fn relationships_request(card: &CharacterCard) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system("You write brief, realistic character details."),
        ChatMessage::user(format!(
            "Describe the social relationships of this person in one or two sentences.\n\
             Name: {}\nOccupation: {}\nAge: {}\nGender: {}\nHobbies: {}\nPersonality: {}",
            card.name,
            card.occupation,
            card.age,
            card.gender,
            card.hobbies.join(", "),
            card.personality.join(", "),
        )),
    ]
}

/// Draws six attributes from the pools; social relationships come from
/// the backend when one is given, otherwise from a fixed template.
pub fn generate_character_card<R: Rng + ?Sized>(
    rng: &mut R,
    pools: &AttributePools,
    chat: Option<&dyn ChatBackend>,
) -> Result<CharacterCard, PersonaError> {
    let name = pick(rng, pools, "name")?;
    let occupation = pick(rng, pools, "occupation")?;
    let age_text = pick(rng, pools, "age")?;
    let age = age_text
        .trim()
        .parse::<u32>()
        .ok()
        .filter(|&a| a > 0)
        .ok_or(PersonaError::BadAge(age_text))?;
    let gender = pick(rng, pools, "gender")?;
    let hobbies = pick_several(rng, pools, "hobbies", 2)?;
    let personality = pick_several(rng, pools, "personality", 2)?;
    let mut card = CharacterCard {
        name,
        occupation,
        age,
        gender,
        hobbies,
        personality,
        social_relationships: String::new(),
    };
    card.social_relationships = match chat {
        Some(chat) => match chat.chat(PERSONA_AGENT, &relationships_request(&card)) {
            Ok(text) => text.trim().to_string(),
            Err(source) => {
                return Err(PersonaError::Backend {
                    partial: Box::new(card),
                    source,
                })
            }
        },
        None => template_relationships(&card),
    };
    card.validate()?;
    Ok(card)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Common,
    Real,
    Hallucinatory,
    Farewell,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Common => "common",
            EventKind::Real => "real",
            EventKind::Hallucinatory => "hallucinatory",
            EventKind::Farewell => "farewell",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub kind: EventKind,
    /// Instruction shown to the human agent.
    pub description: String,
    /// Short form listed in the assistant prompt for hallucinatory events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_note: Option<String>,
    /// An event that must appear earlier in the same plot (a "remember X"
    /// probe requires its "tell X" event).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires: Option<String>,
}

impl Event {
    /// Text listed for the assistant when this event is hallucinatory.
    pub fn note(&self) -> &str {
        self.assistant_note.as_deref().unwrap_or(&self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLibrary {
    events: Vec<Event>,
}

impl EventLibrary {
    pub fn new(events: Vec<Event>) -> Result<Self, PersonaError> {
        let mut ids = HashSet::new();
        for e in &events {
            if e.description.trim().is_empty() {
                return Err(PersonaError::InvalidLibrary(format!(
                    "event {} has an empty description",
                    e.id
                )));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(PersonaError::InvalidLibrary(format!(
                    "duplicate event id {}",
                    e.id
                )));
            }
        }
        let by_id: HashMap<&str, &Event> = events.iter().map(|e| (e.id.as_str(), e)).collect();
        for e in &events {
            if let Some(req) = &e.requires {
                match by_id.get(req.as_str()) {
                    Some(r) if r.kind == e.kind && e.kind != EventKind::Farewell => {}
                    Some(_) => {
                        return Err(PersonaError::InvalidLibrary(format!(
                            "event {} requires {req}, which is of a different kind",
                            e.id
                        )))
                    }
                    None => {
                        return Err(PersonaError::InvalidLibrary(format!(
                            "event {} requires unknown event {req}",
                            e.id
                        )))
                    }
                }
            }
        }
        if !events.iter().any(|e| e.kind == EventKind::Farewell) {
            return Err(PersonaError::InvalidLibrary("no farewell event".into()));
        }
        Ok(EventLibrary { events })
    }

    pub fn parse(text: &str) -> Result<Self, PersonaError> {
        Self::new(jsonl::parse_lines(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PersonaError> {
        Self::parse(&jsonl::read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_EVENTS).expect("built-in event library is valid")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn get(&self, id: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.id == id)
    }

    fn position(&self, id: &str) -> usize {
        self.events
            .iter()
            .position(|e| e.id == id)
            .unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Random interleaving, then dependent events moved after their prerequisites.
    #[default]
    Shuffled,
    /// Library order.
    LibraryOrder,
}

/// How many events of each kind make up the 19 non-farewell plot slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotMix {
    pub real: usize,
    pub hallucinatory: usize,
    pub common: usize,
    pub order: OrderPolicy,
}

impl Default for PlotMix {
    fn default() -> Self {
        PlotMix {
            real: 9,
            hallucinatory: 4,
            common: 6,
            order: OrderPolicy::Shuffled,
        }
    }
}

impl PlotMix {
    pub fn new(real: usize, hallucinatory: usize, common: usize) -> Self {
        PlotMix {
            real,
            hallucinatory,
            common,
            order: OrderPolicy::Shuffled,
        }
    }

    pub fn total(&self) -> usize {
        self.real + self.hallucinatory + self.common
    }
}

/// Twenty events ending in a farewell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Event>", into = "Vec<Event>")]
pub struct Plot {
    events: Vec<Event>,
}

impl Plot {
    pub fn new(events: Vec<Event>) -> Result<Self, PersonaError> {
        if events.len() != PLOT_LEN {
            return Err(PersonaError::InvalidPlot(format!(
                "expected {PLOT_LEN} events, got {}",
                events.len()
            )));
        }
        let (last, body) = events.split_last().expect("non-empty");
        if last.kind != EventKind::Farewell {
            return Err(PersonaError::InvalidPlot(
                "last event is not a farewell".into(),
            ));
        }
        if body.iter().any(|e| e.kind == EventKind::Farewell) {
            return Err(PersonaError::InvalidPlot(
                "farewell event before the final slot".into(),
            ));
        }
        let mut seen = HashSet::new();
        for e in &events {
            if let Some(req) = &e.requires {
                if !seen.contains(req.as_str()) {
                    return Err(PersonaError::InvalidPlot(format!(
                        "event {} appears before its prerequisite {req}",
                        e.id
                    )));
                }
            }
            if !seen.insert(e.id.as_str()) {
                return Err(PersonaError::InvalidPlot(format!(
                    "duplicate event {}",
                    e.id
                )));
            }
        }
        Ok(Plot { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn hallucinatory(&self) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Hallucinatory)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Numbered event list for the human prompt.
    pub fn render(&self) -> String {
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}. {}", i + 1, e.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Stable identifier built from the event ids.
    pub fn signature(&self) -> String {
        self.events
            .iter()
            .map(|e| e.id.as_str())
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl TryFrom<Vec<Event>> for Plot {
    type Error = PersonaError;
    fn try_from(events: Vec<Event>) -> Result<Self, Self::Error> {
        Plot::new(events)
    }
}

impl From<Plot> for Vec<Event> {
    fn from(p: Plot) -> Self {
        p.events
    }
}

/// Groups events linked by `requires` so that a probe is only drawn with
/// its prerequisite.
fn dependency_units<'a>(events: &[&'a Event]) -> Vec<Vec<&'a Event>> {
    let index: HashMap<&str, usize> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..events.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, e) in events.iter().enumerate() {
        if let Some(j) = e.requires.as_deref().and_then(|r| index.get(r)) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, *j));
            parent[a] = b;
        }
    }
    let mut units: Vec<Vec<&Event>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        let root = find(&mut parent, i);
        let k = *slot.entry(root).or_insert_with(|| {
            units.push(Vec::new());
            units.len() - 1
        });
        units[k].push(*e);
    }
    units
}

fn draw_kind<'a, R: Rng + ?Sized>(
    rng: &mut R,
    library: &'a EventLibrary,
    kind: EventKind,
    needed: usize,
) -> Result<Vec<&'a Event>, PersonaError> {
    let pool: Vec<&Event> = library.of_kind(kind).collect();
    let mut units = dependency_units(&pool);
    units.shuffle(rng);
    let sizes: Vec<usize> = units.iter().map(Vec::len).collect();
    if !reachable(&sizes, needed) {
        let available = (0..=needed)
            .rev()
            .find(|n| reachable(&sizes, *n))
            .unwrap_or(0);
        return Err(PersonaError::LibraryTooSmall {
            kind,
            needed,
            available,
        });
    }
    // Take units in shuffled order whenever the rest can still make up the
    // remainder exactly.
    let mut drawn = Vec::with_capacity(needed);
    for (i, unit) in units.into_iter().enumerate() {
        let left = needed - drawn.len();
        if left == 0 {
            break;
        }
        if unit.len() <= left && reachable(&sizes[i + 1..], left - unit.len()) {
            drawn.extend(unit);
        }
    }
    Ok(drawn)
}

/// Whether some subset of `sizes` sums to exactly `target`.
fn reachable(sizes: &[usize], target: usize) -> bool {
    let mut can = vec![false; target + 1];
    can[0] = true;
    for &s in sizes {
        for t in (s..=target).rev() {
            can[t] |= can[t - s];
        }
    }
    can[target]
}

/// Moves each event after its prerequisite by swapping positions until no
/// violation remains.
fn enforce_prerequisites(events: &mut [&Event]) {
    for _ in 0..events.len() * events.len() {
        let pos: HashMap<&str, usize> = events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect();
        let violation = events.iter().enumerate().find_map(|(i, e)| {
            let j = *pos.get(e.requires.as_deref()?)?;
            (j > i).then_some((i, j))
        });
        match violation {
            Some((i, j)) => events.swap(i, j),
            None => return,
        }
    }
}

/// Draws the configured mix without replacement, orders it and appends a
/// farewell.
pub fn sample_plot<R: Rng + ?Sized>(
    rng: &mut R,
    library: &EventLibrary,
    mix: &PlotMix,
) -> Result<Plot, PersonaError> {
    if mix.total() != PLOT_LEN - 1 {
        return Err(PersonaError::BadMix(mix.total()));
    }
    let mut body = draw_kind(rng, library, EventKind::Real, mix.real)?;
    body.extend(draw_kind(
        rng,
        library,
        EventKind::Hallucinatory,
        mix.hallucinatory,
    )?);
    body.extend(draw_kind(rng, library, EventKind::Common, mix.common)?);
    match mix.order {
        OrderPolicy::Shuffled => body.shuffle(rng),
        OrderPolicy::LibraryOrder => body.sort_by_key(|e| library.position(&e.id)),
    }
    enforce_prerequisites(&mut body);
    let farewells: Vec<&Event> = library.of_kind(EventKind::Farewell).collect();
    let farewell = *farewells.choose(rng).ok_or(PersonaError::LibraryTooSmall {
        kind: EventKind::Farewell,
        needed: 1,
        available: 0,
    })?;
    let events = body
        .into_iter()
        .chain(std::iter::once(farewell))
        .cloned()
        .collect();
    Plot::new(events)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub human_prompt: String,
    pub assistant_prompt: String,
}

/// Prompt templates with `{{card}}`, `{{plot}}`, `{{hallucinatory}}`,
/// `{{common_hints}}` and `{{language}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub human: String,
    pub assistant: String,
    pub language: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            human: DEFAULT_HUMAN_TEMPLATE.to_string(),
            assistant: DEFAULT_ASSISTANT_TEMPLATE.to_string(),
            language: "English".to_string(),
        }
    }
}

impl PromptTemplates {
    /// Reads `human.txt` and `assistant.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, PersonaError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| PersonaError::Template {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(PromptTemplates {
            human: read("human.txt")?,
            assistant: read("assistant.txt")?,
            ..Default::default()
        })
    }

    pub fn render(&self, card: &CharacterCard, plot: &Plot, common_hints: &[String]) -> PromptPair {
        let hallucinatory: Vec<&str> = plot.hallucinatory().map(Event::note).collect();
        let hallucinatory_section = if hallucinatory.is_empty() {
            String::new()
        } else {
            format!(
                "\nThe user never told you about the following. If asked about any of them, say you do not remember being told instead of making something up:\n{}\n",
                bullet_list(&hallucinatory)
            )
        };
        let hints: Vec<&str> = common_hints
            .iter()
            .map(String::as_str)
            .filter(|h| !h.trim().is_empty())
            .collect();
        let hints_section = if hints.is_empty() {
            String::new()
        } else {
            format!(
                "\nGet to know the user the way a person would: when it fits naturally, ask about\n{}\n",
                bullet_list(&hints)
            )
        };
        let fill = |template: &str| {
            template
                .replace("{{card}}", &card.render())
                .replace("{{plot}}", &plot.render())
                .replace("{{hallucinatory}}", &hallucinatory_section)
                .replace("{{common_hints}}", &hints_section)
                .replace("{{language}}", &self.language)
        };
        PromptPair {
            human_prompt: fill(&self.human).trim_end().to_string(),
            assistant_prompt: fill(&self.assistant).trim_end().to_string(),
        }
    }
}

fn bullet_list(items: &[&str]) -> String {
    items
        .iter()
        .map(|i| format!("- {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders with the built-in English templates.
pub fn render_prompts(card: &CharacterCard, plot: &Plot, common_hints: &[String]) -> PromptPair {
    PromptTemplates::default().render(card, plot, common_hints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedChat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn table_library() -> EventLibrary {
        let events = EventLibrary::builtin()
            .events()
            .iter()
            .filter(|e| e.id.starts_with('t'))
            .cloned()
            .collect();
        EventLibrary::new(events).unwrap()
    }

    #[test]
    fn builtin_data_loads() {
        let lib = EventLibrary::builtin();
        assert_eq!(lib.of_kind(EventKind::Real).count(), 12);
        assert_eq!(table_library().events().len(), 20);
        AttributePools::builtin().validate().unwrap();
    }

    #[test]
    fn card_is_deterministic_under_seed() {
        let pools = AttributePools::builtin();
        let a = generate_character_card(&mut rng(7), &pools, None).unwrap();
        let b = generate_character_card(&mut rng(7), &pools, None).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.render().contains("Social Relationships: "));
    }

    #[test]
    fn card_relationships_from_backend() {
        let pools = AttributePools::builtin();
        let chat = ScriptedChat::single(["only child; close to grandfather"]);
        let card = generate_character_card(&mut rng(1), &pools, Some(&chat)).unwrap();
        assert_eq!(
            card.social_relationships,
            "only child; close to grandfather"
        );
        let (agent, msgs) = &chat.transcript()[0];
        assert_eq!(agent, PERSONA_AGENT);
        assert!(msgs[1].content.contains(&card.name));
    }

    #[test]
    fn card_backend_failure_keeps_partial_card() {
        let pools = AttributePools::builtin();
        let chat = ScriptedChat::single(Vec::<String>::new());
        let err = generate_character_card(&mut rng(1), &pools, Some(&chat)).unwrap_err();
        match err {
            PersonaError::Backend { partial, .. } => {
                assert!(!partial.name.is_empty());
                assert!(partial.social_relationships.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pools_require_every_attribute() {
        let err = AttributePools::parse(r#"{"attribute":"name","values":["A"]}"#).unwrap_err();
        assert!(matches!(err, PersonaError::EmptyPool(_)));
        let text = DEFAULT_POOLS.replace("\"13\"", "\"thirteen\"");
        assert!(matches!(
            AttributePools::parse(&text),
            Err(PersonaError::BadAge(_))
        ));
    }

    #[test]
    fn default_mix_matches_table_composition() {
        let plot = sample_plot(&mut rng(3), &table_library(), &PlotMix::default()).unwrap();
        assert_eq!(plot.events().len(), 20);
        assert_eq!(plot.count(EventKind::Real), 9);
        assert_eq!(plot.count(EventKind::Hallucinatory), 4);
        assert_eq!(plot.count(EventKind::Common), 6);
        assert_eq!(plot.events()[19].description, "Say goodbye");
    }

    #[test]
    fn all_common_mix() {
        let lib = EventLibrary::new(
            (0..19)
                .map(|i| Event {
                    id: format!("c{i}"),
                    kind: EventKind::Common,
                    description: format!("Chat about topic {i}"),
                    assistant_note: None,
                    requires: None,
                })
                .chain(std::iter::once(Event {
                    id: "bye".into(),
                    kind: EventKind::Farewell,
                    description: "Say goodbye".into(),
                    assistant_note: None,
                    requires: None,
                }))
                .collect(),
        )
        .unwrap();
        let plot = sample_plot(&mut rng(0), &lib, &PlotMix::new(0, 0, 19)).unwrap();
        assert_eq!(plot.count(EventKind::Common), 19);
        assert_eq!(plot.count(EventKind::Farewell), 1);
    }

    #[test]
    fn plot_is_deterministic_under_seed() {
        let lib = EventLibrary::builtin();
        let a = sample_plot(&mut rng(11), &lib, &PlotMix::default()).unwrap();
        let b = sample_plot(&mut rng(11), &lib, &PlotMix::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_seed_fills_the_mix_with_paired_events() {
        // Paired events mean a naive greedy pick can strand one slot.
        let lib = EventLibrary::builtin();
        for seed in 0..500 {
            let plot = sample_plot(&mut rng(seed), &lib, &PlotMix::default()).unwrap();
            let ids: Vec<&str> = plot.events().iter().map(|e| e.id.as_str()).collect();
            for (i, e) in plot.events().iter().enumerate() {
                if let Some(req) = e.requires.as_deref() {
                    let j = ids
                        .iter()
                        .position(|id| *id == req)
                        .expect("prerequisite drawn");
                    assert!(j < i, "seed {seed}: {} before {req}", e.id);
                }
            }
        }
        assert!(reachable(&[2, 2, 1], 5));
        assert!(!reachable(&[2, 2], 3));
    }

    #[test]
    fn library_too_small() {
        let err = sample_plot(&mut rng(0), &table_library(), &PlotMix::new(10, 3, 6)).unwrap_err();
        assert!(matches!(
            err,
            PersonaError::LibraryTooSmall {
                kind: EventKind::Real,
                needed: 10,
                ..
            }
        ));
        assert!(matches!(
            sample_plot(&mut rng(0), &table_library(), &PlotMix::new(9, 4, 5)),
            Err(PersonaError::BadMix(18))
        ));
    }

    #[test]
    fn library_order_policy_keeps_table_order() {
        let mix = PlotMix {
            order: OrderPolicy::LibraryOrder,
            ..Default::default()
        };
        let plot = sample_plot(&mut rng(0), &table_library(), &mix).unwrap();
        let ids: Vec<_> = plot.events().iter().map(|e| e.id.as_str()).collect();
        let expected: Vec<String> = (1..=20).map(|i| format!("t{i:02}")).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn library_rejects_bad_input() {
        let no_farewell = r#"{"id":"a","kind":"common","description":"x"}"#;
        assert!(EventLibrary::parse(no_farewell).is_err());
        let dup = "{\"id\":\"a\",\"kind\":\"farewell\",\"description\":\"x\"}\n{\"id\":\"a\",\"kind\":\"common\",\"description\":\"y\"}";
        assert!(EventLibrary::parse(dup).is_err());
        let dangling = "{\"id\":\"a\",\"kind\":\"farewell\",\"description\":\"x\"}\n{\"id\":\"b\",\"kind\":\"real\",\"description\":\"y\",\"requires\":\"zz\"}";
        assert!(EventLibrary::parse(dangling).is_err());
        let blank = r#"{"id":"a","kind":"farewell","description":"  "}"#;
        assert!(EventLibrary::parse(blank).is_err());
    }

    #[test]
    fn plot_constructor_checks_invariants() {
        let lib = table_library();
        let mut events = lib.events().to_vec();
        assert!(Plot::new(events.clone()).is_ok());
        events.swap(5, 12); // fitness-plan probe before the plan itself
        assert!(Plot::new(events).is_err());
        let mut events = lib.events().to_vec();
        events.rotate_left(1);
        assert!(Plot::new(events).is_err());
        assert!(Plot::new(lib.events()[..19].to_vec()).is_err());
    }

    fn table_plot() -> Plot {
        Plot::new(table_library().events().to_vec()).unwrap()
    }

    fn sample_card() -> CharacterCard {
        generate_character_card(&mut rng(5), &AttributePools::builtin(), None).unwrap()
    }

    #[test]
    fn assistant_prompt_lists_hallucinatory_notes_and_hints() {
        let pair = render_prompts(
            &sample_card(),
            &table_plot(),
            &[DEFAULT_COMMON_HINT.to_string()],
        );
        for note in [
            "first day attending an online course",
            "cherished books",
            "first marathon completion date",
            "private collection inventory",
        ] {
            assert!(pair.assistant_prompt.contains(note), "{note}");
        }
        assert!(pair.assistant_prompt.contains("name, old, hobby, gender"));
        assert!(!pair.assistant_prompt.contains("{{"));
    }

    #[test]
    fn human_prompt_embeds_card_and_all_events() {
        let card = sample_card();
        let plot = table_plot();
        let pair = render_prompts(&card, &plot, &[]);
        assert!(pair.human_prompt.contains(&card.render()));
        for (i, e) in plot.events().iter().enumerate() {
            assert!(pair
                .human_prompt
                .contains(&format!("{}. {}", i + 1, e.description)));
        }
    }

    #[test]
    fn empty_hints_omit_section() {
        let with = render_prompts(&sample_card(), &table_plot(), &[DEFAULT_COMMON_HINT.into()]);
        let without = render_prompts(&sample_card(), &table_plot(), &[]);
        assert!(with.assistant_prompt.contains("when it fits naturally"));
        assert!(!without.assistant_prompt.contains("when it fits naturally"));
    }

    #[test]
    fn assistant_prompt_never_leaks_real_events() {
        let plot = table_plot();
        let pair = render_prompts(&sample_card(), &plot, &[DEFAULT_COMMON_HINT.into()]);
        for e in plot.events().iter().filter(|e| e.kind == EventKind::Real) {
            assert!(!pair.assistant_prompt.contains(&e.description));
        }
    }

    #[test]
    fn rendering_is_pure() {
        let card = sample_card();
        let plot = table_plot();
        let hints = vec![DEFAULT_COMMON_HINT.to_string()];
        assert_eq!(
            render_prompts(&card, &plot, &hints),
            render_prompts(&card, &plot, &hints)
        );
    }

    #[test]
    fn persona_record_flattens_card() {
        let rec = PersonaRecord {
            id: "card-0000".into(),
            card: sample_card(),
        };
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["id"], "card-0000");
        assert!(json["social_relationships"].is_string());
        let back: PersonaRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, rec);
    }
}
