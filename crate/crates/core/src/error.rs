//! Error type shared by the whole library.

/// Everything that can go wrong across the pipeline.
///
/// Variants are grouped by the remedy they suggest: `Param`/`Composition`
/// mean the caller passed something invalid, `Shape`/`Parse`/`RankDeficient`
/// mean the data does not fit together, and the remaining variants are
/// numeric failures detected mid-computation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid composition at index {index}: {reason}")]
    Composition { index: usize, reason: String },

    #[error(
        "rank-deficient composition matrix (Gram condition number {cond:.3e} exceeds 1e12); \
         more training samples are required"
    )]
    RankDeficient { cond: f64 },

    #[error("non-unique solution: {0}")]
    NonUnique(String),

    #[error("variance undefined: {0}")]
    VarianceUndefined(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no closed form for this design: {0}")]
    UnsupportedClosedForm(String),

    #[error(
        "singular covariance ({0}); re-estimate with a diagonal or banded mode \
         (e.g. --cov-mode diag)"
    )]
    SingularCovariance(String),

    #[error(
        "proposal step scale too large: {rejections} consecutive draws left the simplex; \
         reduce the proposal scale"
    )]
    StepScale { rejections: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
