use std::fmt;

/// Error category. The string form is the stable machine-readable code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Shape,
    Unsupported,
    KernelSize,
    Axis,
    NonScalar,
    Config,
    Label,
    Format,
    Io,
    Data,
    Diverged,
    Checkpoint,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Shape => "shape",
            ErrorKind::Unsupported => "unsupported",
            ErrorKind::KernelSize => "kernel-size",
            ErrorKind::Axis => "axis",
            ErrorKind::NonScalar => "non-scalar",
            ErrorKind::Config => "config",
            ErrorKind::Label => "label",
            ErrorKind::Format => "format",
            ErrorKind::Io => "io",
            ErrorKind::Data => "data",
            ErrorKind::Diverged => "diverged",
            ErrorKind::Checkpoint => "checkpoint",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct Error {
    kind: ErrorKind,
    message: String,
}

impl Error {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Error {
            kind,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Shape, message)
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub(crate) fn format(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Format, message)
    }

    pub(crate) fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
