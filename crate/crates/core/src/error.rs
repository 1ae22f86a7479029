use std::fmt;

/// Submission-path error classes, numbered after their errno counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Inval,
    NoEnt,
    NoDev,
    Busy,
    Again,
    Io,
    NoSys,
    NoMem,
    Exist,
}

impl ErrorCode {
    /// The negative-errno value for this class.
    pub fn errno(self) -> i32 {
        match self {
            ErrorCode::Inval => -22,
            ErrorCode::NoEnt => -2,
            ErrorCode::NoDev => -19,
            ErrorCode::Busy => -16,
            ErrorCode::Again => -11,
            ErrorCode::Io => -5,
            ErrorCode::NoSys => -38,
            ErrorCode::NoMem => -12,
            ErrorCode::Exist => -17,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::Inval => "INVAL",
            ErrorCode::NoEnt => "NOENT",
            ErrorCode::NoDev => "NODEV",
            ErrorCode::Busy => "BUSY",
            ErrorCode::Again => "AGAIN",
            ErrorCode::Io => "IO",
            ErrorCode::NoSys => "NOSYS",
            ErrorCode::NoMem => "NOMEM",
            ErrorCode::Exist => "EXIST",
        }
    }

    /// BUSY and AGAIN mean "retry the same submission later".
    pub fn is_transient(self) -> bool {
        matches!(self, ErrorCode::Busy | ErrorCode::Again)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A failure reported on the submission channel.
///
/// Device-reported failures never use this type; they arrive in
/// [`Completion::status`](crate::Completion).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct IoError {
    pub code: ErrorCode,
    pub message: String,
}

impl IoError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        IoError {
            code,
            message: message.into(),
        }
    }

    pub fn inval(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Inval, message)
    }

    pub fn busy(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Busy, message)
    }

    pub fn again(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Again, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Io, message)
    }

    pub fn errno(&self) -> i32 {
        self.code.errno()
    }

    pub fn is_transient(&self) -> bool {
        self.code.is_transient()
    }
}

impl From<std::io::Error> for IoError {
    fn from(err: std::io::Error) -> Self {
        use std::io::ErrorKind;
        let code = match err.kind() {
            ErrorKind::NotFound => ErrorCode::NoEnt,
            ErrorKind::InvalidInput => ErrorCode::Inval,
            ErrorKind::WouldBlock => ErrorCode::Again,
            ErrorKind::OutOfMemory => ErrorCode::NoMem,
            ErrorKind::Unsupported => ErrorCode::NoSys,
            _ => ErrorCode::Io,
        };
        IoError::new(code, err.to_string())
    }
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;
