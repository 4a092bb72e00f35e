//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! ```toml
//! seed = 7
//! jobs = 4
//! out = "out"
//!
//! [generation]            # chat backend for gen-personas / gen-dialogues
//! backend = "http:https://llm.example.com/v1/chat/completions"
//! model_name = "my-model"
//!
//! [evaluation]            # chat backend for eval
//! backend = "scripted:fixtures/scripts/echo_authored.json"
//!
//! [embedding]             # "hash" (default) or "http:<url>"
//! backend = "hash"
//!
//! [limits]
//! max_rounds = 60
//! ```

use std::path::{Path, PathBuf};

use emkit::backends::{
    BackendConfig, ChatBackend, Embedder, HashEmbedder, HttpChat, HttpEmbedder, ReplyScript,
    ScriptedChat,
};
use emkit::dialogue::{GenLimits, TimePolicy};
use emkit::persona::PlotMix;
use emkit::temporal_qa::FamilyCount;
use serde::Deserialize;

use crate::error::{CliError, CliResult, ResultExt};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub generation: BackendSection,
    pub evaluation: BackendSection,
    pub embedding: BackendSection,
    pub time_policy: TimePolicy,
    pub limits: GenLimits,
    pub plot_mix: PlotMix,
    pub common_hints: Option<Vec<String>>,
    pub qa: Option<QaSection>,
    pub paths: Paths,
}

/// A backend spec (`scripted:<path>`, `http:<url>`, or `hash` for
/// embeddings) plus HTTP settings.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub backend: Option<String>,
    /// Decoding temperature; the default depends on the section's role.
    pub temperature: Option<f64>,
    #[serde(flatten)]
    pub http: BackendConfig,
}

/// Generation samples; evaluation decodes greedily.
pub const GENERATION_TEMPERATURE: f64 = 0.8;
pub const EVALUATION_TEMPERATURE: f64 = 0.0;

impl BackendSection {
    pub fn http_config(&self, default_temperature: f64) -> BackendConfig {
        BackendConfig {
            temperature: self.temperature.unwrap_or(default_temperature),
            ..self.http.clone()
        }
    }
}

/// Custom temporal-QA counts; the seed comes from the run.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSection {
    pub counts: Vec<FamilyCount>,
    pub year_range: (i64, i64),
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Event library (JSONL); the built-in library when absent.
    pub events: Option<PathBuf>,
    /// Attribute pools (JSONL); built-in pools when absent.
    pub pools: Option<PathBuf>,
    /// Directory holding `human.txt` and `assistant.txt`.
    pub templates: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).context(format!("reading {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).context(format!("parsing {}", path.display()))?;
        for p in [&cfg.paths.events, &cfg.paths.pools, &cfg.paths.templates]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(CliError::data(format!(
                    "{}: configured path {} does not exist",
                    path.display(),
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }
}

/// A chat provider as selected on the command line or in the config.
pub enum ChatHandle {
    Scripted(ScriptedChat),
    Http(HttpChat),
}

impl ChatHandle {
    pub fn from_spec(spec: &str, http: &BackendConfig) -> CliResult<Self> {
        if let Some(path) = spec.strip_prefix("scripted:") {
            let script = ReplyScript::load(Path::new(path))?;
            return Ok(ChatHandle::Scripted(ScriptedChat::new(script)));
        }
        let url = spec
            .strip_prefix("http:")
            .filter(|u| u.contains("://"))
            .unwrap_or(spec);
        if url.starts_with("http://") || url.starts_with("https://") {
            let config = BackendConfig {
                endpoint: url.to_string(),
                ..http.clone()
            };
            return Ok(ChatHandle::Http(HttpChat::new(config)?));
        }
        Err(CliError::data(format!(
            "backend {spec:?}: expected scripted:<path> or http:<url>"
        )))
    }

    /// A provider for one independent unit of work. Scripted providers
    /// restart their script, so each unit sees the same replies regardless
    /// of scheduling.
    pub fn fresh(&self) -> Box<dyn ChatBackend + '_> {
        match self {
            ChatHandle::Scripted(s) => Box::new(s.reset()),
            ChatHandle::Http(h) => Box::new(h),
        }
    }

    pub fn shared(&self) -> &dyn ChatBackend {
        match self {
            ChatHandle::Scripted(s) => s,
            ChatHandle::Http(h) => h,
        }
    }
}

pub fn embedder(section: &BackendSection) -> CliResult<Box<dyn Embedder>> {
    match section.backend.as_deref() {
        None | Some("hash") => Ok(Box::new(HashEmbedder)),
        Some(spec) => {
            let url = spec.strip_prefix("http:").unwrap_or(spec);
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(CliError::data(format!(
                    "embedding backend {spec:?}: expected hash or http:<url>"
                )));
            }
            let config = BackendConfig {
                endpoint: url.to_string(),
                ..section.http.clone()
            };
            Ok(Box::new(HttpEmbedder::new(config)?))
        }
    }
}
