use std::path::PathBuf;

/// Problems with what the user handed us: bad files, bad flags, missing
/// inputs. The CLI maps these to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("{path}: no usable sketches ({malformed} malformed lines, {empty} empty drawings, {too_long} over the length cap)")]
    NoSketches {
        path: PathBuf,
        malformed: usize,
        empty: usize,
        too_long: usize,
    },
    #[error("{path}: file not found")]
    Missing { path: PathBuf },
    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl InputError {
    pub fn bad_file(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        InputError::BadFile { path: path.into(), reason: reason.to_string() }
    }
}
