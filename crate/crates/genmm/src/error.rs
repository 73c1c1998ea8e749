//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading, validating, or
/// synthesizing motion data.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A rotation could not be reconstructed from its 6D encoding.
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),

    /// Lexical or structural error in a BVH document.
    #[error("BVH parse error at line {line}, column {column}: {message}")]
    BvhParse {
        line: usize,
        column: usize,
        message: String,
    },

    /// The BVH parsed but its contents cannot be interpreted.
    #[error("BVH semantic error: {0}")]
    BvhSemantic(String),

    /// Two values that must share a shape or column layout do not.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// A joint name did not resolve against a skeleton.
    #[error("unknown joint: {0}")]
    UnknownJoint(String),

    /// A skeleton partition violates coverage or connectivity rules.
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// An exemplar has too few frames for the requested configuration.
    #[error("exemplar too short: {frames} frames, need at least {required}")]
    ExemplarTooShort { frames: usize, required: usize },

    /// Matching was attempted against zero candidate windows.
    #[error("empty key set: {0}")]
    EmptyKeySet(String),

    /// A constraint refers to a frame or joint outside the output.
    #[error("constraint out of range: {0}")]
    ConstraintOutOfRange(String),
}
