use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("time step {tau} violates the CFL limit {limit}")]
    Cfl { tau: f64, limit: f64 },
    #[error("wave solver diverged at step {step}")]
    Divergence { step: usize },
    #[error("nonpositive {what} = {value:e} at ({}, {}, {}) for s = {s}", location[0], location[1], location[2])]
    Positivity {
        what: &'static str,
        value: f64,
        location: [f64; 3],
        s: f64,
    },
    #[error("waveform transform vanishes at s = {s} (|f~| = {value:e})")]
    DegenerateWaveform { s: f64, value: f64 },
    #[error("linear solver stalled after {iterations} iterations, relative residual {residual:e}")]
    Solver { iterations: usize, residual: f64 },
    #[error("adjoint residual does not vanish at the final time (|r| = {value:e})")]
    Compatibility { value: f64 },
    #[error("{what}: expected {expected} entries, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no arrival detected in trace")]
    NoArrival,
    #[error("shift of {shift} exceeds the usable record length {available}")]
    Truncation { shift: f64, available: f64 },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
