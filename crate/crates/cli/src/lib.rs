//! Problem-spec ingestion, result bundles and the subcommands of the
//! `sepdetect` binary.

pub mod bundle;
pub mod commands;
pub mod spec;

use thiserror::Error;

use sepdetect::geomsep::GeomError;
use sepdetect::linsys::LinError;
use sepdetect::seqdetect::SeqError;
use sepdetect::simlab::SimError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Provenance(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 0 ok, 1 input error, 2 infeasible or audit failure, 3 provenance mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 1,
            CliError::Infeasible(_) => 2,
            CliError::Provenance(_) => 3,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl From<SeqError> for CliError {
    fn from(e: SeqError) -> Self {
        match e {
            SeqError::InvalidArgument(_) | SeqError::Dimension(_) => CliError::Input(e.to_string()),
            SeqError::Lin(l) => l.into(),
            _ => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<LinError> for CliError {
    fn from(e: LinError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        CliError::Infeasible(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Seq(s) => s.into(),
            SimError::Plumbing(_) => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
