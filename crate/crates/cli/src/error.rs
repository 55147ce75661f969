use std::fmt;
use std::process::ExitCode;

use ilvr_core::Error as CoreError;

/// Exit status classes of the `ilvr` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Data = 3,
    Numeric = 4,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub source: anyhow::Error,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            kind: ExitKind::Usage,
            source: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self {
            kind: ExitKind::Data,
            source: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }

    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            source: self.source.context(ctx),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

/// Maps a core error to the exit class a user would expect: bad flags are
/// usage errors, unreadable or mismatched inputs are data errors.
pub fn classify(err: &CoreError) -> ExitKind {
    match err {
        CoreError::NonFinite { .. } | CoreError::NonFiniteLoss { .. } => ExitKind::Numeric,
        CoreError::InvalidSchedule(_)
        | CoreError::StepOutOfRange { .. }
        | CoreError::IncompatibleFactor { .. }
        | CoreError::InvalidConfig(_) => ExitKind::Usage,
        _ => ExitKind::Data,
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        Self {
            kind: classify(&err),
            source: err.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self {
            kind: ExitKind::Data,
            source: err.into(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        Self {
            kind: ExitKind::Data,
            source: err.into(),
        }
    }
}

/// Attaches context to any error convertible to [`CliError`].
pub trait Context<T> {
    fn context_with(self, ctx: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for std::result::Result<T, E> {
    fn context_with(self, ctx: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| e.into().context(ctx()))
    }
}
