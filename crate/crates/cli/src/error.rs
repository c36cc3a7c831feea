use std::fmt;
use std::path::Path;

use lqtrack::degrade::DegradeError;
use lqtrack::metrics::MetricsError;
use lqtrack::mot_io::MotIoError;
use lqtrack::render::RenderError;
use lqtrack::tracker::TrackerError;

/// Process exit status: bad input or configuration vs. failure while running.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    Runtime = 2,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Runtime,
            message: message.into(),
        }
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<MotIoError> for CliError {
    fn from(e: MotIoError) -> Self {
        match e {
            MotIoError::Io(_) => CliError::runtime(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<DegradeError> for CliError {
    fn from(e: DegradeError) -> Self {
        match e {
            DegradeError::Sequence(inner) => inner.into(),
            DegradeError::Io(_) | DegradeError::Image(_) | DegradeError::Jpeg(_) => CliError::runtime(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Frame { .. } => CliError::runtime(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}
