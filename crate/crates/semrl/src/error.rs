use std::path::PathBuf;

use semrl_core::trainer::TrainError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read `{}`: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{}`: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid config `{}`: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("invalid {what} `{}`: {message}", path.display())]
    Format { what: &'static str, path: PathBuf, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] semrl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use semrl_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Read { .. } | CliError::Config { .. } => EXIT_USAGE,
            CliError::Write { .. } | CliError::Format { .. } | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Core(e) => match e {
                E::Config(_) | E::Usage(_) => EXIT_USAGE,
                E::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Core(e) => CliError::Core(e),
            TrainError::NonFinite(d) => CliError::Numeric(format!(
                "non-finite loss at iteration {}, epoch {}, minibatch {} (l_drl {}, l_fdr {}, l_vq {})",
                d.iteration, d.epoch, d.minibatch, d.l_drl, d.l_fdr, d.l_vq
            )),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn read_file(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}
