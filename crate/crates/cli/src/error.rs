//! Error classification for exit codes.

use std::fmt;

use emkit::backends::BackendError;
use emkit::calendar::CalendarError;
use emkit::dialogue::DialogueError;
use emkit::emtest::EmTestError;
use emkit::eval::EvalError;
use emkit::jsonl::JsonlError;
use emkit::persona::PersonaError;
use emkit::temporal_qa::QaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad input: unreadable or malformed files, invalid configuration.
    Data,
    /// A chat or embedding provider failed.
    Backend,
    /// Data parsed but broke a structural invariant.
    Invariant,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Data => 2,
            Kind::Backend => 3,
            Kind::Invariant => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub source: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, source: impl Into<anyhow::Error>) -> Self {
        CliError {
            kind,
            source: source.into(),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::new(Kind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        CliError {
            kind: self.kind,
            source: self.source.context(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

pub trait ResultExt<T> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T>;
}

impl<T, E: Into<CliError>> ResultExt<T> for Result<T, E> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T> {
        self.map_err(|e| e.into().context(msg))
    }
}

macro_rules! classify {
    ($ty:ty, |$e:ident| $kind:expr) => {
        impl From<$ty> for CliError {
            fn from($e: $ty) -> Self {
                let kind = $kind;
                CliError::new(kind, $e)
            }
        }
    };
}

classify!(BackendError, |e| match e {
    BackendError::Config(_) | BackendError::Fixture { .. } => Kind::Data,
    _ => Kind::Backend,
});
classify!(JsonlError, |e| Kind::Data);
classify!(CalendarError, |e| Kind::Data);
classify!(QaError, |e| Kind::Data);
classify!(std::io::Error, |e| Kind::Data);
classify!(serde_json::Error, |e| Kind::Data);
classify!(toml::de::Error, |e| Kind::Data);
classify!(PersonaError, |e| match e {
    PersonaError::Backend { .. } => Kind::Backend,
    PersonaError::InvalidCard(_) | PersonaError::InvalidPlot(_) => Kind::Invariant,
    _ => Kind::Data,
});
classify!(DialogueError, |e| match e {
    DialogueError::Backend { .. } => Kind::Backend,
    DialogueError::Invariant(_) | DialogueError::Seed(_) => Kind::Invariant,
    _ => Kind::Data,
});
classify!(EmTestError, |e| match e {
    EmTestError::Data(_) => Kind::Data,
    _ => Kind::Invariant,
});
classify!(EvalError, |e| match e {
    EvalError::Embedding(_) => Kind::Backend,
    _ => Kind::Data,
});
