//! Crate-wide error type. Variants are grouped by how the CLI maps them to
//! exit codes: input/schema problems versus numerical failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {what}")]
    InvalidArgument { what: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("schema mismatch: {detail}")]
    SchemaMismatch { detail: String },

    #[error("invariant violation in `{field}`: {detail}")]
    InvariantViolation { field: String, detail: String },

    #[error("invalid hierarchy: {detail}")]
    InvalidHierarchy { detail: String },

    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {detail}")]
    File { path: String, detail: String },

    // Numerical failures.
    #[error("vertices {ids:?} have no incident triangle area; normals undefined")]
    IsolatedVertices { ids: Vec<usize> },

    #[error("normal {index} has length {norm} (must be unit within 1e-6)")]
    NonUnitNormal { index: usize, norm: f64 },

    #[error("degenerate stitch: {detail}")]
    DegenerateStitch { detail: String },

    #[error("no detection: heat-map has zero total mass")]
    NoDetection,

    #[error("window does not intersect the feature map")]
    EmptyIntersection,

    #[error("degenerate rays: parent and child back-projections coincide")]
    DegenerateRay,

    #[error("infeasible bone: no real depth solves the bone-length equation (discriminant {discriminant:.3e})")]
    InfeasibleBone { discriminant: f64 },

    #[error("no admissible depth root among {roots:?}")]
    NoAdmissibleRoot { roots: Vec<f64> },

    #[error("degenerate 6D rotation input: {detail}")]
    Degenerate6d { detail: String },

    #[error("degenerate point set: {detail}")]
    DegeneratePoints { detail: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

impl Error {
    /// True for errors caused by bad input rather than by numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument { .. }
                | Error::DimensionMismatch { .. }
                | Error::SchemaMismatch { .. }
                | Error::InvariantViolation { .. }
                | Error::InvalidHierarchy { .. }
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::File { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
