use std::io;
use std::path::PathBuf;

/// Failures of the IO layer and of the library calls it wraps.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("{path}: dimension mismatch (manifest says {expected}, file has {found})")]
    DimensionMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: unsupported version {found} (this build reads up to {supported})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] segrsd_core::Error),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            DataError::MissingFile(path)
        } else {
            DataError::Io { path, source }
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            DataError::Usage(_) | DataError::Core(segrsd_core::Error::InvalidArgument(_)) => 1,
            DataError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
