use alloc::string::String;
use core::fmt;

/// Error categories raised by the estimation core.
///
/// The variants map one-to-one onto the failure classes callers need to
/// distinguish: bad arguments, bad data, numerical breakdown of a learner,
/// and estimation failures (weak instrument, crossed bounds).
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    Argument(String),
    /// Input data violates a domain invariant (non-binary instrument, NaN, ...).
    Validation(String),
    /// A learner could not be fit (singular design, no convergence, ...).
    Numerical(String),
    /// The estimator itself is undefined for this input.
    Estimation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Validation(_) => "validation",
            Error::Numerical(_) => "numerical",
            Error::Estimation(_) => "estimation",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Error::Argument(m) | Error::Validation(m) | Error::Numerical(m) | Error::Estimation(m) => m,
        }
    }

    /// Prefixes the message with context, keeping the category.
    pub fn context(self, ctx: &str) -> Self {
        let wrap = |m: String| alloc::format!("{ctx}: {m}");
        match self {
            Error::Argument(m) => Error::Argument(wrap(m)),
            Error::Validation(m) => Error::Validation(wrap(m)),
            Error::Numerical(m) => Error::Numerical(wrap(m)),
            Error::Estimation(m) => Error::Estimation(wrap(m)),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.category(), self.message())
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
