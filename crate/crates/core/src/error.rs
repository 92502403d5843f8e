use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Every failure the simulation can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid table: {0}")]
    Table(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("zero-flux neighborhood at r = {r} m, cos = {cos}")]
    ZeroFlux { r: f64, cos: f64 },

    #[error("poisson mean {mu} exceeds mu_max = {mu_max}")]
    MeanTooLarge { mu: f64, mu_max: f64 },

    #[error("energy {0} GeV is below the 100 GeV spectrum floor")]
    BelowSpectrum(f64),

    #[error("determinism regression: {0}")]
    Determinism(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
