use thiserror::Error;

/// Errors surfaced by the solvers and experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("integration blew up at step {step}")]
    BlowUp { step: usize },

    #[error("Hamiltonian maximization is unbounded (regularization weight {lambda} <= 0)")]
    UnboundedMaximization { lambda: f64 },

    #[error("empty sample set")]
    EmptySample,

    #[error("unsupported pairing: {0}")]
    UnsupportedPairing(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("domain too small: characteristic foot {foot} from (t={t}, x={x}, theta={theta}) leaves [{lo}, {hi}]")]
    DomainTooSmall {
        t: f64,
        x: f64,
        theta: f64,
        foot: f64,
        lo: f64,
        hi: f64,
    },

    #[error("trajectory leaves the interior of the value grid at t={t}, x={x}")]
    TrajectoryExitsGrid { t: f64, x: f64 },

    #[error("combinatorial budget exceeded: {count} controls requested, limit {limit}")]
    BudgetExceeded { count: u128, limit: u128 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
