use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {}:{line}: {message}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate utterance id {0:?}")]
    DuplicateUtterance(String),

    #[error(
        "{}: expected {expected} bytes for {n_frames}x{dim} f32 frames, found {found}",
        path.display()
    )]
    DimensionMismatch {
        path: PathBuf,
        n_frames: usize,
        dim: usize,
        expected: u64,
        found: u64,
    },

    #[error("utterance {utterance:?} has feature dim {found}, corpus dim is {expected}")]
    InconsistentFeatureDim {
        utterance: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("empty normalization group: {0}")]
    EmptyScopeGroup(String),

    #[error("alignment {label:?} [{start}, {end}) out of range for {utterance:?} with {n_frames} frames")]
    AlignmentOutOfRange {
        utterance: String,
        label: String,
        start: usize,
        end: usize,
        n_frames: usize,
    },

    #[error("no word type has two or more distinct segments")]
    NoPositivePairsAvailable,

    #[error("pair count must be even (both orderings are emitted), got {0}")]
    OddPairCountRequested(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("feature dim mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("invalid length {0}")]
    InvalidLength(usize),

    #[error("embedding {0} has zero norm")]
    ZeroNormEmbedding(usize),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("no pair of embeddings shares a label")]
    NoSameLabelPairs,

    #[error("frame {index} of {which} has zero norm")]
    ZeroNormFrame { which: &'static str, index: usize },

    #[error("keyword {0:?} has no relevant utterances")]
    NoRelevantUtterances(String),

    #[error("no keyword has at least {0} relevant utterances")]
    NoKeywordsSurviveFilter(usize),

    #[error("layer corpora are inconsistent: {0}")]
    LayerSetInconsistent(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Coarse grouping of errors, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    MissingFile,
    Io,
    InvalidData,
    Shape,
    Numerical,
    InsufficientData,
    Checkpoint,
    Config,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::MissingFile => 3,
            ErrorFamily::Io => 4,
            ErrorFamily::InvalidData => 5,
            ErrorFamily::Shape => 6,
            ErrorFamily::Numerical => 7,
            ErrorFamily::InsufficientData => 8,
            ErrorFamily::Checkpoint => 9,
            ErrorFamily::Config => 10,
        }
    }
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            MissingFile(_) => ErrorFamily::MissingFile,
            Io { .. } => ErrorFamily::Io,
            Manifest { .. }
            | DuplicateUtterance(_)
            | DimensionMismatch { .. }
            | InconsistentFeatureDim { .. }
            | NonFiniteValue(_)
            | AlignmentOutOfRange { .. }
            | LayerSetInconsistent(_) => ErrorFamily::InvalidData,
            ShapeMismatch(_) | EmptySequence | DimMismatch { .. } | InvalidLength(_) => {
                ErrorFamily::Shape
            }
            NonFiniteGradient(_)
            | ZeroNormEmbedding(_)
            | NonFiniteLoss { .. }
            | ZeroNormFrame { .. } => ErrorFamily::Numerical,
            EmptyScopeGroup(_)
            | NoPositivePairsAvailable
            | OddPairCountRequested(_)
            | NoSameLabelPairs
            | NoRelevantUtterances(_)
            | NoKeywordsSurviveFilter(_) => ErrorFamily::InsufficientData,
            Checkpoint(_) => ErrorFamily::Checkpoint,
            InvalidConfig(_) => ErrorFamily::Config,
        }
    }

    /// Wraps an I/O error, reporting a missing file as [`Error::MissingFile`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
