use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes or buffer lengths disagree.
    Dimension(String),
    /// An input that must be finite contains NaN or an infinity.
    NonFinite(&'static str),
    /// A value lies outside its documented range.
    OutOfRange(String),
    /// The posterior kind cannot be used for this operation.
    UnsupportedKind {
        expected: &'static str,
        found: &'static str,
    },
    /// Samples were not drawn from the posterior they are evaluated against.
    Provenance(String),
    InvalidParameter(String),
    /// A mask has no foreground pixel.
    EmptyForeground,
    /// A mask holds more than one foreground class where one object is required.
    MultiObjectMask,
    /// Refinement produced a non-finite loss.
    Divergence { iteration: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::NonFinite(what) => write!(f, "{what} contains non-finite values"),
            Error::OutOfRange(msg) => write!(f, "value out of range: {msg}"),
            Error::UnsupportedKind { expected, found } => {
                write!(f, "unsupported posterior kind {found}, expected {expected}")
            }
            Error::Provenance(msg) => write!(f, "sample provenance mismatch: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::EmptyForeground => f.write_str("mask has no foreground pixels"),
            Error::MultiObjectMask => f.write_str("mask contains more than one foreground class"),
            Error::Divergence { iteration } => {
                write!(f, "refinement diverged: non-finite loss at iteration {iteration}")
            }
        }
    }
}

impl core::error::Error for Error {}
