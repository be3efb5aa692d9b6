use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("model parse error: {0}")]
    Parse(String),

    #[error("polynomial syntax error: {0}")]
    Syntax(String),

    #[error("inadmissible model: {}", .0.join("; "))]
    Inadmissible(Vec<String>),

    #[error("degree {degree} exceeds the supported maximum N_max = {max}")]
    DegreeOverflow { degree: usize, max: usize },

    #[error("missing moment for multi-index {0}")]
    MissingMoment(String),

    #[error("cumulant order {needed} required, table covers only {available}")]
    CumulantOrder { needed: usize, available: usize },

    #[error("model fingerprint mismatch ({0} vs {1})")]
    ModelMismatch(String, String),

    #[error("{0} requires zero constant characteristics")]
    ConstantCharacteristics(&'static str),

    #[error("MC unsupported with jump kernels")]
    JumpsUnsupported,

    #[error("PSD factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite state in {0} simulated paths")]
    NonFinitePaths(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by malformed input rather than by the mathematics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Parse(_) | Error::Syntax(_))
    }
}
