use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation (orthogonality defect {defect:.3e}, det {det:.6})")]
    NotARotation { defect: f64, det: f64 },
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("point is not on the variety (residual {0:.3e})")]
    NotOnVariety(f64),
    #[error("axes are not orthonormal (defect {0:.3e})")]
    AxesNotOrthonormal(f64),
    #[error("vector is not an odeco tensor (residual {0:.3e})")]
    NotOdeco(f64),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular point of the variety (normal rank {rank}, expected {expected})")]
    SingularPoint { rank: usize, expected: usize },
    #[error("vector is not tangent (normal component {0:.3e})")]
    NotTangent(f64),
    #[error("degenerate query: {0}")]
    DegenerateQuery(String),
    #[error("SDP solver failure: {0}")]
    SolverFailure(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no tetrahedra")]
    EmptyMesh,
    #[error("degenerate tetrahedron {index} (volume {volume:.3e})")]
    DegenerateTet { index: usize, volume: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("no acceptable step at minimum trust radius")]
    LineFailure,
    #[error("invalid quadric data: {0}")]
    QuadricData(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::EmptyMesh
                | Error::DimensionMismatch { .. }
                | Error::QuadricData(_)
                | Error::Checkpoint(_)
                | Error::InvalidInput(_)
                | Error::Io(_)
                | Error::NotUnit(_)
                | Error::NotARotation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
