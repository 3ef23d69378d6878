use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("code `{code}` cannot be represented at level {level}")]
    UnknownCode { code: String, level: u32 },

    #[error("layer mismatch: expected `{expected}`, found `{found}`")]
    LayerMismatch { expected: String, found: String },

    #[error("input years are not consecutive: {years:?}")]
    NonConsecutiveYears { years: Vec<i32> },

    #[error("matrix grand total is zero")]
    ZeroTotal,

    #[error("the two matrices share no countries")]
    EmptyCountryIntersection,

    #[error(
        "fit did not converge within {iterations} iterations \
         (best residual {residual:e}, tolerance {tolerance:e})"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("degenerate input: {0}; apply `reduce` before fitting")]
    DegenerateInput(String),

    #[error("missing matrices for: {}", .0.join(", "))]
    MissingWindows(Vec<String>),

    #[error(
        "an ensemble of {size} samples cannot resolve threshold {threshold}: the smallest \
         attainable p-value is 1/(size+1), so at least {required} samples are required"
    )]
    EnsembleTooSmall {
        size: usize,
        threshold: f64,
        required: usize,
    },

    #[error("unknown export format `{format}` (supported: {supported})")]
    UnknownFormat { format: String, supported: String },

    #[error("unknown target code `{code}`{}", fmt_suggestions(.suggestions))]
    UnknownTarget {
        code: String,
        suggestions: Vec<String>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// A short stable identifier for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::UnknownCode { .. } => "unknown_code",
            Error::LayerMismatch { .. } => "layer_mismatch",
            Error::NonConsecutiveYears { .. } => "non_consecutive_years",
            Error::ZeroTotal => "zero_total",
            Error::EmptyCountryIntersection => "empty_country_intersection",
            Error::NotConverged { .. } => "not_converged",
            Error::DegenerateInput(..) => "degenerate_input",
            Error::MissingWindows(..) => "missing_windows",
            Error::EnsembleTooSmall { .. } => "ensemble_too_small",
            Error::UnknownFormat { .. } => "unknown_format",
            Error::UnknownTarget { .. } => "unknown_target",
            Error::InvalidConfig(..) => "invalid_config",
            Error::InvalidInput(..) => "invalid_input",
            Error::Stage { .. } => "stage",
            Error::Io(..) => "io",
        }
    }
}

fn fmt_suggestions(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!(" (closest known codes: {})", suggestions.join(", "))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
