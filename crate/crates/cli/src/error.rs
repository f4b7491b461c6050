use ldp_moe::bounds::BoundError;
use ldp_moe::data::DataError;
use ldp_moe::model::ModelError;
use ldp_moe::train::TrainError;
use ldp_moe::verify::VerifyError;
use thiserror::Error;

/// Failure of a subcommand; each variant owns one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("{0}")]
    Other(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> CliError {
        CliError::Other(format!("{}: {err}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Data(d) => d.into(),
            TrainError::Diverged { .. } => CliError::Divergence(e.to_string()),
            TrainError::Model(m) => CliError::Other(m.to_string()),
        }
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::Delta(_)
            | BoundError::Lambda(_)
            | BoundError::Epsilon(_)
            | BoundError::EmptyGrid
            | BoundError::Cap(_)
            | BoundError::Unconstrained => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Other(e.to_string())
    }
}
