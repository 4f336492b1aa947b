use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: &'static str, message: String },

    #[error("non-finite state at sample {sample}")]
    NonFiniteState { sample: usize },

    #[error("no oscillation detected")]
    NoOscillation,

    #[error("no periodic solution in bracket [{t_min:e}, {t_max:e}]")]
    NoPeriodicSolution { t_min: f64, t_max: f64 },

    #[error("degenerate period at T = {period:e}: boundary map has no unique symmetric solution")]
    DegeneratePeriod { period: f64 },

    #[error("pulse equivalent requires even lock (T/2 = N*Ts for some integer N >= 1)")]
    PulseRequiresEvenLock,

    #[error("lock at 2*{n_lock}*Ts not reachable in the search window")]
    LockNotReachable { n_lock: u32 },

    #[error("zoom region [{lo:e}, {hi:e}] lies outside the swept range")]
    ZoomOutOfRange { lo: f64, hi: f64 },
}

impl Error {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
