use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: matrix is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("expected a square matrix, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("{what}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("{what}: non-finite value encountered")]
    NonFiniteEvaluation { what: String },

    #[error("{what}: division by zero")]
    DivisionByZero { what: String },

    #[error("information matrix became singular at step {step}")]
    SingularInformation { step: usize },

    #[error("no candidate E in the grid yields a valid error bound")]
    NoFeasibleE,

    #[error("{what}: signal is degenerate (variance below 1e-12)")]
    DegenerateSignal { what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config at `{path}`: {reason}")]
    ConfigInvalid { path: String, reason: String },

    #[error("missing artifact {}", path.display())]
    MissingArtifact { path: PathBuf },

    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}: {source}")]
    AtRun {
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable identifier for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NonSquare { .. } => "NonSquare",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteEvaluation { .. } => "NonFiniteEvaluation",
            Error::DivisionByZero { .. } => "DivisionByZero",
            Error::SingularInformation { .. } => "SingularInformation",
            Error::NoFeasibleE => "NoFeasibleE",
            Error::DegenerateSignal { .. } => "DegenerateSignal",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::MissingArtifact { .. } => "MissingArtifact",
            Error::Parse { .. } => "Parse",
            Error::Io { .. } => "Io",
            Error::AtStep { source, .. } | Error::AtRun { source, .. } => source.kind(),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_run(self, run: usize) -> Self {
        Error::AtRun {
            run,
            source: Box::new(self),
        }
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFiniteEvaluation { what: what.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
