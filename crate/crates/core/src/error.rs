use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name}: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    Dimension {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{0}: non-finite value")]
    NonFinite(String),

    #[error("integration diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("regular condition fails at t = {time}")]
    Irregular { time: f64 },

    #[error("t = {0} is not a grid point")]
    OffGrid(f64),

    #[error("coupled ARE did not converge up to horizon {horizon}: {reason}")]
    NonConvergent { horizon: f64, reason: String },

    #[error("simulation produced a non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("degenerate polynomial: {0}")]
    Degenerate(String),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv export: {0}")]
    Export(String),
}

impl Error {
    pub(crate) fn dim(name: &str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::Dimension {
            name: name.to_string(),
            expected_rows: expected.0,
            expected_cols: expected.1,
            rows: found.0,
            cols: found.1,
        }
    }
}
