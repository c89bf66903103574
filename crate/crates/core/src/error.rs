use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("wave packet does not fit on the grid: {0}")]
    PacketOutsideGrid(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("plane-wave cutoff too small: band {band} moved by {shift:e} when the cutoff grew by 8")]
    CutoffTooSmall { band: usize, shift: f64 },

    #[error("no commensurate point in bracket [{lo}, {hi}]: {reason}")]
    NoCommensurability { lo: f64, hi: f64, reason: String },

    #[error("grid and band table do not match: {0}")]
    Mismatch(String),

    #[error("non-finite wave function at step {step}")]
    NonFinite { step: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("numerical tolerance not reached: {0}")]
    Convergence(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("sweep point {value} failed: {source}")]
    SweepPoint {
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::Fit(_)
            | Error::Convergence(_)
            | Error::CutoffTooSmall { .. }
            | Error::NoCommensurability { .. } => true,
            Error::SweepPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
