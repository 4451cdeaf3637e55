//! Command errors and their process exit codes.

use std::process::ExitCode;

use rawvox::audio::AudioError;
use rawvox::dataset::DatasetError;
use rawvox::networks::NetworkError;
use rawvox::pipeline::PipelineError;
use rawvox::training::TrainingError;
use thiserror::Error;

/// Broad failure class; each maps to one exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Other,
    Usage,
    /// A checkpoint the command needs is missing or incompatible.
    Dependency,
    /// Input audio, corpus or manifest is unreadable or unusable.
    Data,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Other => 1,
            ErrorClass::Usage => 2,
            ErrorClass::Dependency => 3,
            ErrorClass::Data => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn network_class(e: &NetworkError) -> ErrorClass {
    match e {
        NetworkError::Checkpoint(_) | NetworkError::Version { .. } | NetworkError::ConfigMismatch(_) | NetworkError::WrongStage { .. } => {
            ErrorClass::Dependency
        }
        NetworkError::Config(_) => ErrorClass::Usage,
        NetworkError::SingerOutOfRange { .. } => ErrorClass::Usage,
        _ => ErrorClass::Other,
    }
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Audio(_) | CliError::Dataset(_) => ErrorClass::Data,
            CliError::Network(e) => network_class(e),
            CliError::Training(e) => match e {
                TrainingError::Config(_) => ErrorClass::Usage,
                TrainingError::MissingDependency { .. } => ErrorClass::Dependency,
                TrainingError::Dataset(_) => ErrorClass::Data,
                TrainingError::Network(e) => network_class(e),
                _ => ErrorClass::Other,
            },
            CliError::Pipeline(e) => match e {
                PipelineError::Usage(_) => ErrorClass::Usage,
                PipelineError::MissingCheckpoint { .. } => ErrorClass::Dependency,
                PipelineError::Audio(_) | PipelineError::Dataset(_) => ErrorClass::Data,
                PipelineError::Network(e) => network_class(e),
                PipelineError::Io(_) => ErrorClass::Other,
            },
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.class().exit_code())
    }
}
