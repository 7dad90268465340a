use alloc::string::String;
use core::fmt;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A feature id appears twice in one sparse vector.
    DuplicateIndex { index: usize },
    /// Indices were not strictly increasing.
    UnsortedIndices { position: usize },
    /// A feature value (or target) is NaN or infinite.
    NonFiniteValue { index: usize },
    /// `indices` and `values` differ in length.
    LengthMismatch { indices: usize, values: usize },
    /// A stored value was exactly zero.
    ZeroValue { index: usize },
    /// A feature id is not below the feature dimension.
    IndexOutOfRange { index: usize, n_features: usize },
    /// An instance does not hold exactly one nonzero inside a declared one-hot field.
    FieldViolation { instance: usize, field: &'static str, found: usize },
    /// A field range extends past the feature dimension.
    FieldOutOfRange { field: &'static str },
    /// An operation needed a field the dataset does not declare.
    MissingField { field: &'static str },
    /// Code matrix entry that is not +1 or -1.
    NotSign { position: usize },
    /// Shapes of two operands disagree.
    Dimension(String),
    /// The delegate solve needs `k <= n - 1`.
    InsufficientFeatures { k: usize, n: usize },
    /// `sgn` of NaN.
    NanInput,
    /// The objective stopped being finite.
    NonFinite { iteration: usize, stage: &'static str },
    /// Cached predictions drifted away from a full recompute.
    CacheInconsistent { instance: usize, drift: f64 },
    /// A scoring candidate shares a feature with the user context.
    ContextOverlap { index: usize },
    /// An argument outside its documented range.
    InvalidArgument(String),
    /// Training needs at least one instance.
    EmptyData,
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DuplicateIndex { index } => write!(f, "duplicate index {index}"),
            Error::UnsortedIndices { position } => {
                write!(f, "indices not strictly increasing at position {position}")
            }
            Error::NonFiniteValue { index } => write!(f, "non-finite value at index {index}"),
            Error::LengthMismatch { indices, values } => {
                write!(f, "{indices} indices but {values} values")
            }
            Error::ZeroValue { index } => write!(f, "explicit zero stored at index {index}"),
            Error::IndexOutOfRange { index, n_features } => {
                write!(f, "feature index {index} out of range (n = {n_features})")
            }
            Error::FieldViolation { instance, field, found } => write!(
                f,
                "instance {instance} has {found} nonzeros in the {field} field (expected 1)"
            ),
            Error::FieldOutOfRange { field } => {
                write!(f, "{field} field extends past the feature dimension")
            }
            Error::MissingField { field } => write!(f, "dataset declares no {field} field"),
            Error::NotSign { position } => write!(f, "entry {position} is not +1 or -1"),
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InsufficientFeatures { k, n } => write!(
                f,
                "insufficient features for de-correlated delegate (k = {k}, n = {n}, need k <= n - 1)"
            ),
            Error::NanInput => write!(f, "sgn of NaN"),
            Error::NonFinite { iteration, stage } => {
                write!(f, "objective became non-finite at iteration {iteration} ({stage})")
            }
            Error::CacheInconsistent { instance, drift } => write!(
                f,
                "cached prediction for instance {instance} drifted by {drift:e}"
            ),
            Error::ContextOverlap { index } => {
                write!(f, "candidate overlaps the user context at feature {index}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::EmptyData => write!(f, "dataset has no instances"),
        }
    }
}

impl core::error::Error for Error {}
