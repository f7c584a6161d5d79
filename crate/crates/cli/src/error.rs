use std::path::PathBuf;

use sinn_core::Error as CoreError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_MISSING_ARTIFACT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_NON_FINITE: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("contract {id}")]
    Parse {
        id: String,
        #[source]
        source: CoreError,
    },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("configuration: {0}")]
    Config(String),
}

fn core_code(e: &CoreError) -> Option<i32> {
    match e {
        CoreError::NonFiniteLoss { .. } | CoreError::NonFiniteGradient(_) => Some(EXIT_NON_FINITE),
        CoreError::Config(_) | CoreError::InvalidFraction(_) | CoreError::VocabTooSmall(_) => Some(EXIT_CONFIG),
        CoreError::UnclosedBrace { .. }
        | CoreError::UnmatchedCloseBrace { .. }
        | CoreError::Json { .. }
        | CoreError::LabelArity { .. }
        | CoreError::LabelValue { .. }
        | CoreError::DuplicateId { .. }
        | CoreError::EmptyField { .. }
        | CoreError::VocabFormat(_)
        | CoreError::Checkpoint(_) => Some(EXIT_PARSE),
        CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Some(EXIT_MISSING_ARTIFACT),
        _ => None,
    }
}

/// Process exit code for an error: the first cause with a dedicated code
/// decides, otherwise 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return match c {
                CliError::Parse { .. } => EXIT_PARSE,
                CliError::MissingArtifact(_) => EXIT_MISSING_ARTIFACT,
                CliError::Config(_) => EXIT_CONFIG,
            };
        }
        if let Some(code) = cause.downcast_ref::<CoreError>().and_then(core_code) {
            return code;
        }
    }
    EXIT_FAILURE
}
