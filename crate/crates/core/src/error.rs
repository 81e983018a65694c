use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

/// Errors raised by the engine, the blocks and the training utilities.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    Shape(String),
    /// A convolution or pooling geometry yields an empty output.
    EmptyOutput(String),
    /// `backward` was called on a value holding more than one element.
    NonScalarLoss { numel: usize },
    /// A label or mask value is not a valid class index.
    LabelOutOfRange { value: usize, classes: usize },
    /// A gradient contains NaN or infinity.
    NonFiniteGradient { param: String },
    /// A trainable parameter received no gradient.
    MissingGradient { param: String },
    /// Batch-norm statistics cannot be folded or normalized.
    BadStatistics(String),
    /// Fused networks only support inference.
    FusedTraining,
    /// Invalid network or pipeline configuration.
    Config(String),
    /// Netpbm payload does not start with the expected magic.
    BadMagic { expected: &'static str },
    /// Netpbm payload ends before the declared raster does.
    Truncated { expected: usize, found: usize },
    /// Only 8-bit netpbm files are accepted.
    UnsupportedMaxval(u32),
    /// Netpbm header is malformed.
    BadHeader(String),
    /// A parameter lookup by name failed.
    UnknownParam(String),
    /// An empty collection was passed where at least one item is required.
    Empty(&'static str),
    /// A training step failed; `step` is the zero-based global step index.
    AtStep { step: u64, source: Box<Error> },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::EmptyOutput(msg) => write!(f, "empty output: {msg}"),
            Error::NonScalarLoss { numel } => {
                write!(f, "backward needs a scalar loss, got {numel} elements")
            }
            Error::LabelOutOfRange { value, classes } => {
                write!(f, "label {value} out of range for {classes} classes")
            }
            Error::NonFiniteGradient { param } => write!(f, "non-finite gradient in `{param}`"),
            Error::MissingGradient { param } => write!(f, "no gradient for `{param}`"),
            Error::BadStatistics(msg) => write!(f, "bad batch-norm statistics: {msg}"),
            Error::FusedTraining => write!(f, "fused networks cannot run in training mode"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::BadMagic { expected } => write!(f, "bad netpbm magic, expected {expected}"),
            Error::Truncated { expected, found } => {
                write!(f, "truncated payload: expected {expected} bytes, found {found}")
            }
            Error::UnsupportedMaxval(v) => write!(f, "unsupported maxval {v}, only 255 is accepted"),
            Error::BadHeader(msg) => write!(f, "malformed netpbm header: {msg}"),
            Error::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::AtStep { step, source } => write!(f, "training step {step}: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::AtStep { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
