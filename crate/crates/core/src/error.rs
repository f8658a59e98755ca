use std::fmt;
use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug)]
pub enum Error {
    /// A tensor or layer input had the wrong shape.
    Shape { layer: Option<usize>, detail: String },
    /// Layer hyperparameters do not chain, or a layer is misplaced.
    Graph(String),
    /// A value was NaN or infinite where a finite number is required.
    NonFinite(String),
    /// An argument was outside its documented domain.
    InvalidArgument(String),
    /// A pruning target could not be met without emptying a layer.
    Starvation(String),
    /// Training produced a non-finite loss.
    Divergence { epoch: usize, detail: String },
    Io { path: PathBuf, source: std::io::Error },
    /// A persisted file was malformed.
    Format { path: PathBuf, kind: FormatErrorKind, detail: String },
    Csv(String),
}

/// Distinct causes of a malformed on-disk container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    Version,
    Magic,
    Truncated,
    Inconsistent,
    Syntax,
    Empty,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { layer: Some(l), detail } => write!(f, "shape mismatch at layer {l}: {detail}"),
            Error::Shape { layer: None, detail } => write!(f, "shape mismatch: {detail}"),
            Error::Graph(d) => write!(f, "invalid model graph: {d}"),
            Error::NonFinite(d) => write!(f, "non-finite value: {d}"),
            Error::InvalidArgument(d) => write!(f, "invalid argument: {d}"),
            Error::Starvation(d) => write!(f, "pruning would empty a layer: {d}"),
            Error::Divergence { epoch, detail } => write!(f, "training diverged in epoch {epoch}: {detail}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Format { path, kind, detail } => {
                write!(f, "{}: {kind:?} error: {detail}", path.display())
            }
            Error::Csv(d) => write!(f, "csv: {d}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn shape(layer: impl Into<Option<usize>>, detail: impl Into<String>) -> Self {
        Error::Shape { layer: layer.into(), detail: detail.into() }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }

    /// True for failures caused by numerics rather than usage or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. } | Error::Starvation(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. } | Error::Csv(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
