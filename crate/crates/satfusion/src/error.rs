use std::path::{Path, PathBuf};

/// Errors of the file formats and the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Core(#[from] satfusion_core::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

impl IoError {
    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        IoError::Json { path: path.to_path_buf(), source }
    }

    /// Process exit status: 1 for bad invocations, 2 for bad data.
    pub fn exit_code(&self) -> i32 {
        match self {
            IoError::Usage(_) => 1,
            IoError::Core(satfusion_core::Error::Usage(_) | satfusion_core::Error::Parameter(_)) => 1,
            _ => 2,
        }
    }
}

/// Attaches a path to a core error that came out of a file's contents.
pub(crate) fn at(path: &Path) -> impl Fn(satfusion_core::Error) -> IoError + '_ {
    move |e| IoError::format(path, e.to_string())
}
