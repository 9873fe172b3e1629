use thiserror::Error;

/// Errors produced by the compression toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogrError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported query: {reason}: `{clause}`")]
    UnsupportedQuery { reason: String, clause: String },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<LogrError>,
    },

    #[error("log is empty")]
    EmptyLog,

    #[error("width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("encoding is not naive (pattern with {0} features)")]
    NotNaive(usize),

    #[error("too many features: {n} exceeds cap {cap}")]
    TooManyFeatures { n: usize, cap: usize },

    #[error("too many distinct rows: {rows} exceeds cap {cap}")]
    TooManyRows { rows: usize, cap: usize },

    #[error("missing pattern {0:?} in encoding")]
    MissingPattern(Vec<usize>),

    #[error("constraints are infeasible (residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("k = {k} exceeds the {rows} distinct rows")]
    KTooLarge { k: usize, rows: usize },

    #[error("score undefined: true marginal {true_marginal}, estimate {estimate}")]
    UndefinedScore { true_marginal: f64, estimate: f64 },

    #[error("projection failed after {rounds} rounds (residual {residual:.3e})")]
    ProjectionFailed { rounds: usize, residual: f64 },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl LogrError {
    pub fn at_line(self, line: usize) -> Self {
        LogrError::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// 1-based line number for errors raised while reading a log file.
    pub fn line(&self) -> Option<usize> {
        match self {
            LogrError::AtLine { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, LogrError>;
