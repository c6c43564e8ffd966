use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// A data file that is missing or does not parse.
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: pgkit::Error,
    },

    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: pgkit::Error,
    },

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: pgkit::Error,
    },
}

impl CliError {
    /// 2 for bad configuration or input, 1 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input { .. } => 2,
            CliError::Output { .. } => 1,
            CliError::Run { source, .. } => {
                if is_config_like(source) {
                    2
                } else {
                    1
                }
            }
        }
    }
}

fn is_config_like(e: &pgkit::Error) -> bool {
    matches!(
        e,
        pgkit::Error::InvalidArgument(_) | pgkit::Error::LengthMismatch { .. } | pgkit::Error::Parse(_)
    )
}

pub(crate) fn input_err(path: &std::path::Path) -> impl FnOnce(pgkit::Error) -> CliError + '_ {
    move |source| CliError::Input {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn output_err(path: &std::path::Path) -> impl FnOnce(pgkit::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}
