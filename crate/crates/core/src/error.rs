use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input too short: {len} samples, window needs {window}")]
    InputTooShort { len: usize, window: usize },
    #[error("invalid audio: {0}")]
    InvalidAudio(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("unknown source {id} (have {k})")]
    UnknownSource { id: usize, k: usize },
    #[error("empty after silence removal")]
    EmptyAfterSilenceRemoval,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("numerical overflow in flow")]
    NumericalOverflow,
    #[error("degenerate batch dimension {0}")]
    DegenerateBatchDimension(usize),
    #[error("invalid gradient")]
    InvalidGradient,
    #[error("training diverged after epoch {last_finite_epoch}")]
    TrainingDiverged { last_finite_epoch: usize },
    #[error("empty dictionary")]
    EmptyDictionary,
    #[error("decomposition diverged at step {step}")]
    DecompositionDiverged { step: usize, trace: alloc::vec::Vec<f64> },
    #[error("empty activation matrix")]
    EmptyActivation,
    #[error("empty input")]
    EmptyInput,
    #[error("model kind mismatch: {0}")]
    WrongModelKind(&'static str),
}
