use std::path::PathBuf;

use thiserror::Error;

/// Which family of constraints made a dispatch problem infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    SocWindow,
    PowerBounds,
    EnergyCycle,
    Network,
}

impl std::fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintClass::SocWindow => "soc_window",
            ConstraintClass::PowerBounds => "power_bounds",
            ConstraintClass::EnergyCycle => "energy_cycle",
            ConstraintClass::Network => "network",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("data: row {row}: {reason}")]
    Row { row: usize, reason: String },

    #[error("infeasible: {class} ({detail})")]
    Infeasible { class: ConstraintClass, detail: String },

    #[error("solver: no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invariant: {0}")]
    Invariant(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("at day {day} interval {interval}: {source}")]
    At {
        day: usize,
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario {index}: {source}")]
    Scenario {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse category used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Solver,
    Invariant,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::Row { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::Infeasible { .. } | Error::NonConvergence { .. } => ErrorKind::Solver,
            Error::Invariant(_) => ErrorKind::Invariant,
            Error::At { source, .. } | Error::Scenario { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn at(self, day: usize, interval: usize) -> Self {
        Error::At { day, interval, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapped_errors_keep_their_kind() {
        let e = Error::Infeasible { class: ConstraintClass::SocWindow, detail: "x".into() }.at(2, 5);
        assert_eq!(e.kind(), ErrorKind::Solver);
        assert!(e.to_string().contains("day 2 interval 5"));
        let e = Error::Scenario { index: 3, source: Box::new(Error::config("bad")) };
        assert_eq!(e.kind(), ErrorKind::Config);
    }
}
