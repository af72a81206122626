use core::fmt;

/// Errors raised by the estimation pipeline.
#[derive(Clone, Debug, PartialEq)]
pub enum DsfError {
    Config(&'static str),
    Shape { expected: (usize, usize), found: (usize, usize) },
    NonFinite { context: &'static str },
    NotHermitian { row: usize, col: usize },
    EigenNoConvergence { sweeps: usize },
    DegenerateCovariance,
    DegenerateBin { bin: usize },
    SilentBin { bin: usize },
    ZeroColumn { col: usize },
    ProjectionDegenerate,
    TooFewFrames { frames: usize, sources: usize },
    NonFiniteCost { frame: usize },
    NonFiniteGradient { frame: usize },
    ZeroTotalWeight,
    CoherenceBound { draws: usize },
    TooManySources { sources: usize, max: usize },
    ZeroReference,
    LengthMismatch { expected: usize, found: usize },
}

impl fmt::Display for DsfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DsfError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            DsfError::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {}x{}, found {}x{}", expected.0, expected.1, found.0, found.1)
            }
            DsfError::NonFinite { context } => write!(f, "non-finite values in {context}"),
            DsfError::NotHermitian { row, col } => write!(f, "matrix is not Hermitian at ({row}, {col})"),
            DsfError::EigenNoConvergence { sweeps } => {
                write!(f, "Hermitian eigendecomposition did not converge after {sweeps} sweeps")
            }
            DsfError::DegenerateCovariance => write!(f, "degenerate covariance"),
            DsfError::DegenerateBin { bin } => write!(f, "bin {bin} degenerate"),
            DsfError::SilentBin { bin } => write!(f, "silent bin {bin}: every frame dropped"),
            DsfError::ZeroColumn { col } => write!(f, "column {col} has zero norm"),
            DsfError::ProjectionDegenerate => write!(f, "projection degenerate"),
            DsfError::TooFewFrames { frames, sources } => {
                write!(f, "{frames} frames cannot be clustered into {sources} sources")
            }
            DsfError::NonFiniteCost { frame } => write!(f, "non-finite cost at frame {frame}"),
            DsfError::NonFiniteGradient { frame } => write!(f, "non-finite gradient at frame {frame}"),
            DsfError::ZeroTotalWeight => write!(f, "total effective weight is zero"),
            DsfError::CoherenceBound { draws } => {
                write!(f, "could not draw mixing columns under the coherence bound in {draws} attempts")
            }
            DsfError::TooManySources { sources, max } => write!(f, "{sources} sources exceeds the limit of {max}"),
            DsfError::ZeroReference => write!(f, "reference signal is zero"),
            DsfError::LengthMismatch { expected, found } => write!(f, "length mismatch: expected {expected}, found {found}"),
        }
    }
}

impl core::error::Error for DsfError {}

impl DsfError {
    /// Attaches a bin index to errors that are bin-scoped.
    pub fn in_bin(self, bin: usize) -> Self {
        match self {
            DsfError::DegenerateCovariance => DsfError::DegenerateBin { bin },
            DsfError::SilentBin { .. } => DsfError::SilentBin { bin },
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, DsfError>;
