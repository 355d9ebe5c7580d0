//! Failure classes and their exit codes. Every failure prints one line,
//! `error\t<kind>\t<message>`, on stderr.

use std::process::ExitCode;

use plfm::PlfmError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or arguments (exit 1).
    Usage(String),
    /// Missing, malformed or unpaired inputs (exit 2).
    Data(String),
    /// Checkpoints that do not fit the configuration or each other (exit 3).
    Incompatible(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Incompatible(_) => "incompatible",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Incompatible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Incompatible(m) => m,
        }
    }

    pub fn report(&self) -> ExitCode {
        let msg = self.message().replace(['\n', '\t'], " ");
        eprintln!("error\t{}\t{msg}", self.kind());
        ExitCode::from(self.code())
    }
}

impl From<PlfmError> for CliError {
    fn from(e: PlfmError) -> Self {
        if e.is_incompatibility() {
            CliError::Incompatible(e.to_string())
        } else if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

/// I/O failure on `path`.
pub fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}
