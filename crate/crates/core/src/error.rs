use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the crate.
#[derive(Debug)]
pub enum Error {
    /// Two operands (or an operand and a layer) disagree on shape.
    DimensionMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    /// A single operand has a shape the operation cannot accept.
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    /// Invalid configuration value.
    Config(String),
    /// A stateful call happened out of order (e.g. backward before forward).
    State(String),
    /// Index out of range.
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    /// Malformed file contents (bad magic, bad record size).
    Format(String),
    /// File or payload shorter/longer than its header announces.
    Length {
        what: String,
        expected: usize,
        actual: usize,
    },
    /// Two files that must agree do not.
    Consistency(String),
    /// Well-formed file carrying invalid values (e.g. label >= 10).
    Data(String),
    /// The finite-difference oracle could not evaluate the loss.
    Oracle(String),
    /// The gradient audit cannot run on the given model.
    Audit(String),
    /// A minima-space comparison clause failed.
    Minima { clause: &'static str, detail: String },
    /// Training aborted on a non-finite loss.
    Diverged {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
        loss: f64,
    },
    /// Checkpoint written by an incompatible format version.
    Version { expected: u32, found: u32 },
    /// Checkpoint manifest disagrees with the model rebuilt from its config.
    CheckpointShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    Io {
        path: Option<PathBuf>,
        source: io::Error,
    },
    Json(serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }

    pub(crate) fn mismatch(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// Process exit code used by the CLI: 2 for I/O and file-format problems,
    /// 1 for everything else (validation and configuration failures).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Format(_)
            | Error::Length { .. }
            | Error::Consistency(_)
            | Error::Data(_)
            | Error::Version { .. }
            | Error::CheckpointShape { .. }
            | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                op,
                expected,
                actual,
            } => write!(
                f,
                "{op}: dimension mismatch, expected {expected:?}, got {actual:?}"
            ),
            Error::InvalidShape { op, shape, reason } => {
                write!(f, "{op}: invalid shape {shape:?}: {reason}")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Index { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Length {
                what,
                expected,
                actual,
            } => write!(
                f,
                "length error in {what}: expected {expected} bytes, got {actual}"
            ),
            Error::Consistency(msg) => write!(f, "consistency error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Oracle(msg) => write!(f, "finite-difference oracle error: {msg}"),
            Error::Audit(msg) => write!(f, "gradient audit error: {msg}"),
            Error::Minima { clause, detail } => {
                write!(f, "minima comparison failed ({clause}): {detail}")
            }
            Error::Diverged {
                epoch,
                batch,
                learning_rate,
                loss,
            } => write!(
                f,
                "non-finite loss {loss} at epoch {epoch}, batch {batch} (learning rate {learning_rate})"
            ),
            Error::Version { expected, found } => write!(
                f,
                "checkpoint format version {found} is not supported (expected {expected})"
            ),
            Error::CheckpointShape {
                layer,
                expected,
                found,
            } => write!(
                f,
                "checkpoint shape mismatch in {layer}: model expects {expected:?}, file has {found:?}"
            ),
            Error::Io {
                path: Some(path),
                source,
            } => write!(f, "{}: {source}", path.display()),
            Error::Io { path: None, source } => write!(f, "{source}"),
            Error::Json(err) => write!(f, "json error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Json(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io { path: None, source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Json(err)
    }
}
