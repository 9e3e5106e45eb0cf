use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter fell outside its admissible range.
    #[error("{name} must be in {range}, got {value}")]
    Domain {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    /// A token outside the vocabulary.
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    InvalidToken { token: u8, vocab: usize },
    /// A labeled matrix row with zero mass cannot be normalized.
    #[error("degenerate process: row {row} of the labeled matrix for token {token} sums to zero")]
    DegenerateProcess { token: u8, row: usize },
    /// A Bayesian update conditioned on an observation of probability zero.
    #[error("observation of token {token} has zero probability under the current belief")]
    ImpossibleObservation { token: u8 },
    /// An iterative solve stopped without meeting its tolerance.
    #[error("{what} did not converge (residual {residual:e})")]
    NonConvergence { what: &'static str, residual: f64 },
    /// The spectral decomposition failed its projector checks.
    #[error("spectral decomposition failed: {reason} (residual {residual:e})")]
    Spectral { reason: &'static str, residual: f64 },
    /// A prediction was requested outside the parameter regime it covers.
    #[error("regime error: {0}")]
    Regime(String),
    /// A request exceeded a configured size limit.
    #[error("{what} {requested} exceeds the limit {limit}")]
    ResourceLimit {
        what: &'static str,
        requested: usize,
        limit: usize,
    },
    /// Malformed configuration or mismatched shapes.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A sequence longer than the model context.
    #[error("sequence of length {len} does not fit the model context (1..={max_ctx})")]
    Context { len: usize, max_ctx: usize },
    /// A non-finite value appeared where finite numbers are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// Training loss exceeded the divergence threshold for too long.
    #[error("training diverged at step {step}: mean loss {loss} over the last {window} steps")]
    Divergence { step: u64, loss: f64, window: usize },
    /// An operation needs at least one element.
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
