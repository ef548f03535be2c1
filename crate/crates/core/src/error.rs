use crate::dde::Trajectory;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("query at t = {t} lies outside the covered interval [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    /// The solution crossed the overflow guard. The trajectory computed up to
    /// that point rides along so callers can still inspect or plot it.
    #[error("solution magnitude exceeded the overflow guard at t = {t}")]
    Divergence { t: f64, partial: Box<Trajectory> },

    #[error("no Hopf point: {0}")]
    NoHopf(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
