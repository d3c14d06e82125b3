use convsearch_core::data::DataError;
use convsearch_core::distill::DistillError;
use convsearch_core::grpo::GrpoError;
use convsearch_core::metrics::EvalError;
use convsearch_core::pipeline::PipelineError;
use convsearch_core::retrieval::RetrievalError;
use thiserror::Error;

use crate::config::one_line;

/// Failure classes, one per nonzero exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or config values.
    #[error("{0}")]
    Usage(String),
    /// Missing or malformed inputs, including index files of another format version.
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": one_line(&self.to_string()),
        })
        .to_string()
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ZeroCutoff => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Data(d) => d.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        match e {
            GrpoError::Config(m) => CliError::Usage(m),
            GrpoError::Io { .. } | GrpoError::Eval(_) => CliError::Data(e.to_string()),
            GrpoError::Retrieval(r) => r.into(),
            GrpoError::Invariant(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Distill(d) => d.into(),
            PipelineError::Grpo(g) => g.into(),
        }
    }
}
