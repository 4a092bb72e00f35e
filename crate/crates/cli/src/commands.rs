use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use emkit::dialogue::{self, DialogueError, EMTrainRecord, RecordLabels, TrainingSample};
use emkit::emtest::{self, EMTestDataset};
use emkit::eval::{self, HumanScore, KeywordReport, PointResult};
use emkit::jsonl;
use emkit::persona::{
    self, AttributePools, EventLibrary, PersonaRecord, PromptTemplates, DEFAULT_COMMON_HINT,
};
use emkit::temporal_qa::{self, Family, Horizon, QAConfig, QAItem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, ChatHandle, RunConfig};
use crate::error::{CliError, CliResult, Kind, ResultExt};

pub const PERSONAS_FILE: &str = "personas.jsonl";
pub const EM_TRAIN_FILE: &str = "em_train.jsonl";
pub const SAMPLES_FILE: &str = "training_samples.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const HUMAN_REPORT_TXT: &str = "human_report.txt";
pub const KEYWORD_RESULTS_FILE: &str = "keyword_results.jsonl";
pub const KEYWORD_REPORT_JSON: &str = "keyword_report.json";
pub const KEYWORD_REPORT_TXT: &str = "keyword_report.txt";
pub const CORRELATION_FILE: &str = "correlation.json";

/// Settings resolved from flags, config and defaults (in that order).
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: PathBuf,
    pub backend: Option<String>,
}

impl Ctx {
    fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::data("a seed is required (--seed or `seed` in the config)"))
    }

    /// Path of an output file; creates the output directory on demand.
    fn output(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).context(format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.output(name)?;
        fs::write(&path, text).context(format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> CliResult<PathBuf> {
        let path = self.output(name)?;
        jsonl::write_lines(&path, items)?;
        log::info!("wrote {} line(s) to {}", items.len(), path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// The chat backend: `--backend` first, then the config section.
    fn chat(
        &self,
        section: &config::BackendSection,
        default_temperature: f64,
    ) -> CliResult<Option<ChatHandle>> {
        match self.backend.as_deref().or(section.backend.as_deref()) {
            Some(spec) => Ok(Some(ChatHandle::from_spec(
                spec,
                &section.http_config(default_temperature),
            )?)),
            None => Ok(None),
        }
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::data(format!("worker pool: {e}")))
    }

    fn library(&self) -> CliResult<EventLibrary> {
        Ok(match &self.cfg.paths.events {
            Some(p) => EventLibrary::load(p)?,
            None => EventLibrary::builtin(),
        })
    }

    fn pools(&self) -> CliResult<AttributePools> {
        Ok(match &self.cfg.paths.pools {
            Some(p) => AttributePools::load(p)?,
            None => AttributePools::builtin(),
        })
    }

    fn templates(&self) -> CliResult<PromptTemplates> {
        Ok(match &self.cfg.paths.templates {
            Some(dir) => PromptTemplates::load_dir(dir)?,
            None => PromptTemplates::default(),
        })
    }
}

/// Independent stream seed for a named stage and item index.
fn stream_seed(seed: u64, stage: &str, index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

fn make_personas(
    ctx: &Ctx,
    count: usize,
    chat: Option<&ChatHandle>,
) -> CliResult<Vec<PersonaRecord>> {
    let seed = ctx.seed()?;
    let pools = ctx.pools()?;
    let cards: Vec<CliResult<PersonaRecord>> = ctx.pool()?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "persona", i));
                let backend = chat.map(ChatHandle::fresh);
                let card = persona::generate_character_card(&mut rng, &pools, backend.as_deref())
                    .context(format!("persona {i}"))?;
                Ok(PersonaRecord {
                    id: format!("persona-{i:05}"),
                    card,
                })
            })
            .collect()
    });
    cards.into_iter().collect()
}

pub fn gen_personas(ctx: &Ctx, count: usize) -> CliResult<()> {
    let chat = ctx.chat(&ctx.cfg.generation, config::GENERATION_TEMPERATURE)?;
    let records = make_personas(ctx, count, chat.as_ref())?;
    let path = ctx.write_jsonl(PERSONAS_FILE, &records)?;
    println!("{} persona(s) -> {}", records.len(), path.display());
    Ok(())
}

pub fn gen_dialogues(ctx: &Ctx, count: usize, personas: Option<&Path>) -> CliResult<()> {
    let seed = ctx.seed()?;
    let chat = ctx
        .chat(&ctx.cfg.generation, config::GENERATION_TEMPERATURE)?
        .ok_or_else(|| CliError::data("gen-dialogues needs a chat backend (--backend)"))?;
    let personas = match personas {
        Some(p) => {
            let list: Vec<PersonaRecord> = jsonl::read_lines(p)?;
            for r in &list {
                r.card.validate().context(format!("persona {}", r.id))?;
            }
            list
        }
        None => make_personas(ctx, count, Some(&chat))?,
    };
    if personas.is_empty() && count > 0 {
        return Err(CliError::data("the persona file is empty"));
    }
    let library = ctx.library()?;
    let templates = ctx.templates()?;
    let hints = ctx
        .cfg
        .common_hints
        .clone()
        .unwrap_or_else(|| vec![DEFAULT_COMMON_HINT.to_string()]);
    ctx.cfg.limits.validate()?;
    ctx.cfg.time_policy.validate()?;

    let outcomes: Vec<CliResult<Option<EMTrainRecord>>> = ctx.pool()?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let who = &personas[i % personas.len()];
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "dialogue", i));
                let plot = persona::sample_plot(&mut rng, &library, &ctx.cfg.plot_mix)?;
                let prompts = templates.render(&who.card, &plot, &hints);
                let labels = RecordLabels {
                    id: format!("dialogue-{i:05}"),
                    character_id: who.id.clone(),
                    plot_id: format!("plot-{i:05}"),
                };
                let backend = chat.fresh();
                match dialogue::generate_dialogue(
                    backend.as_ref(),
                    &prompts,
                    &ctx.cfg.time_policy,
                    &ctx.cfg.limits,
                    &mut rng,
                    &labels,
                ) {
                    Ok(record) => Ok(Some(record)),
                    Err(e @ (DialogueError::Invariant(_) | DialogueError::Seed(_))) => {
                        log::warn!("dropping {}: {e}", labels.id);
                        Ok(None)
                    }
                    Err(e) => Err(CliError::from(e).context(format!("record {}", labels.id))),
                }
            })
            .collect()
    });
    let mut records = Vec::new();
    for outcome in outcomes {
        records.extend(outcome?);
    }
    let samples: Vec<TrainingSample> = records.iter().map(dialogue::to_training_sample).collect();
    ctx.write_jsonl(EM_TRAIN_FILE, &records)?;
    ctx.write_jsonl(SAMPLES_FILE, &samples)?;
    let dropped = count - records.len();
    println!(
        "{} record(s) -> {}{}",
        records.len(),
        ctx.out.display(),
        if dropped > 0 {
            format!(" ({dropped} dropped by invariant checks)")
        } else {
            String::new()
        }
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Eval,
    Train,
    Both,
    /// Counts from the `[qa]` config section.
    Config,
}

fn qa_tsv(items: &[QAItem]) -> String {
    let mut out = String::from("family\thorizon\tobservation\tquestion\tanswer\tkeywords\n");
    for item in items {
        out.push_str(&item.to_tsv_row());
        out.push('\n');
    }
    out
}

fn write_qa(ctx: &Ctx, stem: &str, config: &QAConfig) -> CliResult<()> {
    let items = temporal_qa::synthesize(config)?;
    let path = ctx.write_jsonl(&format!("{stem}.jsonl"), &items)?;
    ctx.write_text(&format!("{stem}.tsv"), &qa_tsv(&items))?;
    let short = items.iter().filter(|i| i.horizon == Horizon::Short).count();
    println!(
        "{} item(s) ({short} short, {} long) -> {}",
        items.len(),
        items.len() - short,
        path.display()
    );
    Ok(())
}

pub fn gen_temporal_qa(ctx: &Ctx, preset: Preset) -> CliResult<()> {
    let seed = ctx.seed()?;
    if matches!(preset, Preset::Eval | Preset::Both) {
        write_qa(
            ctx,
            "temporal_qa_eval",
            &QAConfig::eval_preset(stream_seed(seed, "qa-eval", 0)),
        )?;
    }
    if matches!(preset, Preset::Train | Preset::Both) {
        write_qa(
            ctx,
            "temporal_qa_train",
            &QAConfig::train_preset(stream_seed(seed, "qa-train", 0)),
        )?;
    }
    if preset == Preset::Config {
        let section = ctx
            .cfg
            .qa
            .as_ref()
            .ok_or_else(|| CliError::data("--preset config needs a [qa] section"))?;
        let config = QAConfig {
            counts: section.counts.clone(),
            year_range: section.year_range,
            seed: stream_seed(seed, "qa", 0),
        };
        write_qa(ctx, "temporal_qa", &config)?;
    }
    Ok(())
}

/// What a JSONL file holds, judged by its first record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Empty,
    EmTest,
    EmTrain,
    TrainingSamples,
    QaItems,
    Personas,
    Results,
}

pub fn detect(text: &str) -> CliResult<FileKind> {
    let Some((line, first)) = jsonl::numbered_lines(text).next() else {
        return Ok(FileKind::Empty);
    };
    let value: serde_json::Value =
        serde_json::from_str(first).map_err(|e| CliError::data(format!("line {line}: {e}")))?;
    let has = |k: &str| value.get(k).is_some();
    Ok(if has("points") {
        FileKind::EmTest
    } else if has("meta") {
        FileKind::EmTrain
    } else if has("messages") {
        FileKind::TrainingSamples
    } else if has("family") && has("keywords") {
        FileKind::QaItems
    } else if has("similarity") {
        FileKind::Results
    } else if has("occupation") {
        FileKind::Personas
    } else {
        return Err(CliError::data(format!(
            "line {line}: unrecognised record type"
        )));
    })
}

fn qa_table(items: &[QAItem]) -> String {
    let mut counts: BTreeMap<Family, (usize, usize)> = BTreeMap::new();
    for item in items {
        let c = counts.entry(item.family).or_default();
        match item.horizon {
            Horizon::Short => c.0 += 1,
            Horizon::Long => c.1 += 1,
        }
    }
    let mut out = format!(
        "{:<26} {:>10} {:>10} {:>8}\n",
        "Family", "Short-term", "Long-term", "Overall"
    );
    let (mut s, mut l) = (0, 0);
    for (family, (short, long)) in counts {
        s += short;
        l += long;
        let name = serde_json::to_value(family).ok();
        let name = name.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        let _ = writeln!(out, "{name:<26} {short:>10} {long:>10} {:>8}", short + long);
    }
    let _ = writeln!(out, "{:<26} {s:>10} {l:>10} {:>8}", "Overall Number", s + l);
    out
}

pub fn stats(path: &Path) -> CliResult<String> {
    let text = jsonl::read_to_string(path)?;
    Ok(match detect(&text)? {
        FileKind::Empty | FileKind::EmTest => {
            emtest::stats(&EMTestDataset::parse(&text)?).to_string()
        }
        FileKind::EmTrain => {
            let records: Vec<EMTrainRecord> = jsonl::parse_lines(&text)?;
            for r in &records {
                r.validate(None)?;
            }
            emtest::corpus_stats(&records).to_string()
        }
        FileKind::TrainingSamples => {
            let samples: Vec<TrainingSample> = jsonl::parse_lines(&text)?;
            let loss: usize = samples.iter().map(TrainingSample::loss_turns).sum();
            format!("samples:     {}\nloss turns:  {loss}\n", samples.len())
        }
        FileKind::QaItems => qa_table(&jsonl::parse_lines(&text)?),
        FileKind::Personas => {
            let personas: Vec<PersonaRecord> = jsonl::parse_lines(&text)?;
            format!("personas:    {}\n", personas.len())
        }
        FileKind::Results => {
            let results: Vec<PointResult> = jsonl::parse_lines(&text)?;
            eval::render_table(&[("results", &eval::aggregate(&results))])
        }
    })
}

pub fn run_eval(ctx: &Ctx, dataset: &Path, human: Option<&Path>, name: &str) -> CliResult<()> {
    let text = jsonl::read_to_string(dataset)?;
    let chat = ctx
        .chat(&ctx.cfg.evaluation, config::EVALUATION_TEMPERATURE)?
        .ok_or_else(|| CliError::data("eval needs a chat backend (--backend)"))?;
    match detect(&text)? {
        FileKind::QaItems => {
            let items: Vec<QAItem> = jsonl::parse_lines(&text)?;
            let results = eval::run_keyword_eval(chat.shared(), &items, ctx.jobs)?;
            let report = KeywordReport::from_results(&results);
            ctx.write_jsonl(KEYWORD_RESULTS_FILE, &results)?;
            ctx.write_json(KEYWORD_REPORT_JSON, &report)?;
            let table = KeywordReport::render(&[(name, &report)]);
            ctx.write_text(KEYWORD_REPORT_TXT, &table)?;
            print!("{table}");
        }
        FileKind::EmTest | FileKind::Empty => {
            let ds = EMTestDataset::parse(&text)?;
            let embedder = config::embedder(&ctx.cfg.embedding)?;
            let mut results = eval::run_eval(chat.shared(), &ds, embedder.as_ref(), ctx.jobs)?;
            if let Some(h) = human {
                let scores: Vec<HumanScore> = jsonl::read_lines(h)?;
                eval::attach_human_scores(&mut results, &scores)?;
                let table = eval::render_table(&[(name, &eval::aggregate_human(&results))]);
                ctx.write_text(HUMAN_REPORT_TXT, &table)?;
            }
            let flagged = results.iter().filter(|r| r.flag.is_some()).count();
            if flagged > 0 {
                log::warn!("{flagged} point(s) flagged; see {RESULTS_FILE}");
            }
            let report = eval::aggregate(&results);
            ctx.write_jsonl(RESULTS_FILE, &results)?;
            ctx.write_json(REPORT_JSON, &report)?;
            let table = eval::render_table(&[(name, &report)]);
            ctx.write_text(REPORT_TXT, &table)?;
            print!("{table}");
        }
        other => {
            return Err(CliError::data(format!(
                "{}: expected a benchmark or temporal-QA file, found {other:?}",
                dataset.display()
            )))
        }
    }
    Ok(())
}

pub fn correlate(ctx: &Ctx, human: &Path, results: &Path) -> CliResult<()> {
    let scores: Vec<HumanScore> = jsonl::read_lines(human)?;
    let results: Vec<PointResult> = jsonl::read_lines(results)?;
    let correlations =
        eval::correlate_results(&results, &scores).map_err(|e| CliError::new(Kind::Data, e))?;
    for c in &correlations {
        println!(
            "{}: r = {:.3} ({}, n = {})",
            c.difficulty.name(),
            c.r,
            match c.label {
                eval::CorrelationLabel::HighlyPositive => "highly positive",
                eval::CorrelationLabel::Other => "not highly positive",
            },
            c.pairs
        );
    }
    ctx.write_json(CORRELATION_FILE, &correlations)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seeds_differ_by_stage_and_index() {
        assert_ne!(stream_seed(1, "a", 0), stream_seed(1, "b", 0));
        assert_ne!(stream_seed(1, "a", 0), stream_seed(1, "a", 1));
        assert_ne!(stream_seed(1, "a", 0), stream_seed(2, "a", 0));
        assert_eq!(stream_seed(5, "a", 3), stream_seed(5, "a", 3));
    }

    #[test]
    fn detects_file_kinds() {
        assert_eq!(detect("\n\n").unwrap(), FileKind::Empty);
        assert_eq!(
            detect("{\"id\":\"x\",\"points\":[]}").unwrap(),
            FileKind::EmTest
        );
        assert_eq!(
            detect("{\"messages\":[]}").unwrap(),
            FileKind::TrainingSamples
        );
        assert!(detect("{\"nothing\":1}").is_err());
        assert!(detect("not json").is_err());
    }
}
