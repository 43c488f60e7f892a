use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("shape mismatch: expected {expected}x{expected}, found {rows}x{cols}")]
    Shape {
        expected: usize,
        rows: usize,
        cols: usize,
    },

    #[error("unknown atomic level `{0}` (expected one of 0, 1, e)")]
    UnknownLevel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cavity truncation {cavity_dim} too small: norm deficit {deficit:.3e} (try cavity_dim >= {suggested})")]
    Truncation {
        cavity_dim: usize,
        deficit: f64,
        suggested: usize,
    },

    #[error("state trace {0:e} is not strictly positive")]
    NonPositiveTrace(f64),

    #[error("time step too large: jump probability {probability:.3} at t = {time} (suggested dt <= {suggested_dt:e})")]
    StepTooLarge {
        probability: f64,
        time: f64,
        suggested_dt: f64,
    },

    #[error("trace drift {drift:e} in one step at t = {time}")]
    TraceDrift { drift: f64, time: f64 },

    #[error("quantum jump applied to a dark state (zero jump probability)")]
    DarkJump,

    #[error("measurement record is impossible under every hypothesis")]
    AllFiltersDead,

    #[error("malformed measurement record: {0}")]
    Record(String),

    #[error("record does not match the model: {0}")]
    RecordMismatch(String),

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Configuration-class errors: bad input rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Dimension(_)
            | Error::Shape { .. }
            | Error::UnknownLevel(_)
            | Error::Config(_)
            | Error::Truncation { .. }
            | Error::Record(_)
            | Error::RecordMismatch(_) => true,
            Error::Trajectory { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
