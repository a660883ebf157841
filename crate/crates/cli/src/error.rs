//! Exit codes and the machine-readable error report.

use scuba_core::analysis::AnalysisError;
use scuba_core::caption_retrieval::RetrievalError;
use scuba_core::encoder::EncoderError;
use scuba_core::projection::ProjectionError;
use scuba_core::synth::SynthError;
use scuba_core::tensor_io::IoError;
use serde::Serialize;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            kind: "data",
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            kind: "numeric",
            message: message.into(),
        }
    }

    /// Prefixes the message with context such as the offending file.
    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Io(io) => io.into(),
            EncoderError::Config(_) | EncoderError::TooFewFolds(_) => CliError::config(e.to_string()),
            EncoderError::Singular { .. } | EncoderError::ZeroWeightColumns { .. } | EncoderError::NonFinite => {
                CliError::numeric(e.to_string())
            }
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        match e {
            ProjectionError::Io(io) => io.into(),
            ProjectionError::Temperature(_)
            | ProjectionError::Chunk
            | ProjectionError::Repeats
            | ProjectionError::SubsetSize { .. } => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Io(io) => io.into(),
            RetrievalError::Projection(p) => p.into(),
            RetrievalError::EmptyBank | RetrievalError::K | RetrievalError::NoRepeats => {
                CliError::config(e.to_string())
            }
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Io(io) => io.into(),
            AnalysisError::LexiconLine { .. }
            | AnalysisError::PersonLine { .. }
            | AnalysisError::EmptyLexicon
            | AnalysisError::EmptyPersonList
            | AnalysisError::ZeroK
            | AnalysisError::ZeroRestarts
            | AnalysisError::RoiRange { .. }
            | AnalysisError::RoiDuplicate { .. }
            | AnalysisError::CategoryNames { .. }
            | AnalysisError::TooFewCategories(_) => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(io) => io.into(),
            SynthError::Config(_) => CliError::config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
