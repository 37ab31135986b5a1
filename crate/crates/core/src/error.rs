//! Crate-wide error type. Every fallible operation in the engine returns
//! [`Result`]; message wording for contract errors (e.g. "unregistered
//! input", "shape signature violation") is part of the public behavior and
//! covered by tests.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

pub type Shape = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("invalid shape for {op}: {message}")]
    InvalidShape { op: &'static str, message: String },

    #[error("unregistered input: tensor {0} is not a variable or placeholder of this tape")]
    UnregisteredInput(usize),

    #[error("gradient source must be scalar, got {0}x{1}")]
    NonScalarSource(usize, usize),

    #[error("unsupported derivative order {0}")]
    UnsupportedOrder(usize),

    #[error("untraceable control flow: tensor values cannot be read while tracing")]
    UntraceableControlFlow,

    #[error("shape signature violation: input {index} has shape {got:?}, kernel expects {want:?}")]
    ShapeSignatureViolation {
        index: usize,
        got: Shape,
        want: Shape,
    },

    #[error("wrong input count: kernel expects {want} inputs, got {got}")]
    InputCount { want: usize, got: usize },

    #[error("derivative target not found in graph")]
    WrtNotFound,

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("non-finite value produced by {0}")]
    NonFiniteResult(&'static str),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("bad axis: {0}")]
    BadAxis(String),

    #[error("oversample: requested {requested} of {available} matching points")]
    Oversample { requested: usize, available: usize },

    #[error("batch size {batch} exceeds dataset size {size}")]
    BatchTooLarge { batch: usize, size: usize },

    #[error("diverged: non-finite gradient (loss term '{0}')")]
    Diverged(String),

    #[error("stage count {0} outside supported range 1..=500")]
    StageCountOutOfRange(usize),

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("unknown config key '{key}'; valid keys: {valid}")]
    UnknownConfigKey { key: String, valid: String },

    #[error("config key '{key}': {message}")]
    ConfigValue { key: String, message: String },

    #[error("config syntax at line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("zero target norm")]
    ZeroTargetNorm,

    #[error("missing targets for '{0}' condition")]
    MissingTargets(&'static str),

    #[error("missing partial '{0}' for residual")]
    MissingPartial(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
