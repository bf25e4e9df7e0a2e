use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("mesh invariant violated: {0}")]
    MeshInvariant(String),

    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("invalid problem specification: {0}")]
    InvalidSpec(String),

    #[error("state layout mismatch: expected {expected} coefficients, got {found}")]
    LayoutMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is singular (failing pivot {pivot})")]
    Singular { pivot: usize },

    #[error("sparse factorisation failed: {0}")]
    Factorisation(String),

    #[error("linear solve failed at Newton iteration {iteration}: {source}")]
    LinearSolve {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite residual at Newton iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("pointwise stress solve did not converge after {iterations} iterations (|G| = {residual:e})")]
    PointwiseNoConvergence { iterations: usize, residual: f64 },

    #[error("continuation stage {stage} (eps = {eps:e}) failed to converge")]
    StageFailed { stage: usize, eps: f64 },

    #[error("time stepping exceeded {steps} steps without reaching a steady state")]
    StepBudget { steps: usize },

    #[error("point {index} at ({x}, {y}) lies outside the mesh")]
    PointOutside { index: usize, x: f64, y: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
