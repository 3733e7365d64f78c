use thiserror::Error;

/// Failure classes of the solver. Each maps onto one process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("compatibility check failed: {0}")]
    Compat(String),

    #[error("lapse solve did not converge in {iterations} iterations (relative residual {residual:e})")]
    LapseNotConverged { iterations: usize, residual: f64 },

    #[error("picard iteration is not contracting: difference norms {0:?}")]
    PicardDiverged(Vec<f64>),

    #[error("picard iteration stopped after {iterations} iterates at difference {diff:e}")]
    PicardNotConverged { iterations: usize, diff: f64 },

    #[error("ill-conditioned boundary solve at {face} face node ({i1},{i2}): condition {cond:e}")]
    BoundarySolve { face: &'static str, i1: usize, i2: usize, cond: f64 },

    #[error("degenerate metric at node ({0},{1},{2})")]
    DegenerateMetric(usize, usize, isize),

    #[error("non-finite value in {field} at node ({i1},{i2},{i3})")]
    NonFinite { field: String, i1: usize, i2: usize, i3: isize },

    #[error("ghost layer of {0} read before it was filled")]
    UnfilledGhost(String),

    #[error("{0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit status: config=2, compat=3, solver=4, numeric=5.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Grid(_) | Error::Config { .. } | Error::Io { .. } => 2,
            Error::Compat(_) => 3,
            Error::LapseNotConverged { .. }
            | Error::PicardDiverged(_)
            | Error::PicardNotConverged { .. }
            | Error::BoundarySolve { .. } => 4,
            Error::DegenerateMetric(..)
            | Error::NonFinite { .. }
            | Error::UnfilledGhost(_)
            | Error::Numeric(_) => 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(Error::config("grid.n1", "bad").exit_code(), 2);
        assert_eq!(Error::Compat("x".into()).exit_code(), 3);
        assert_eq!(Error::LapseNotConverged { iterations: 1, residual: 1.0 }.exit_code(), 4);
        assert_eq!(Error::DegenerateMetric(0, 0, 0).exit_code(), 5);
        assert!(Error::config("grid.n1", "bad").to_string().contains("grid.n1"));
    }
}
