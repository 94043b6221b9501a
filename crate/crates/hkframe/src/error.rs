//! Error type shared by every module.
//!
//! Variants split into three families, mirrored by the CLI exit codes:
//! input/validation problems (exit 2), numerical failures (exit 3), and IO.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- validation (exit code 2) ----
    #[error("asymmetric distance at ({i},{j}): {dij} vs {dji}")]
    AsymmetricDistance { i: usize, j: usize, dij: f64, dji: f64 },
    #[error("triangle inequality violated at ({i},{j},{k}): {dij} > {dik} + {dkj}")]
    TriangleInequalityViolation { i: usize, j: usize, k: usize, dij: f64, dik: f64, dkj: f64 },
    #[error("nonpositive measure at point {i}: {mu}")]
    NonpositiveMeasure { i: usize, mu: f64 },
    #[error("delta must lie in (0,1), got {0}")]
    InvalidDelta(f64),
    #[error("operator is not self-adjoint in the mu-inner product: max |M L - (M L)^T| = {defect}")]
    NotSelfAdjoint { defect: f64 },
    #[error("negative eigenvalue {value} below clip threshold {threshold}")]
    NegativeSpectrum { value: f64, threshold: f64 },
    #[error("m must satisfy m > s/beta0 (got m={m}, s={s}, beta0={beta0})")]
    InvalidM { m: usize, s: f64, beta0: f64 },
    #[error("{0}")]
    InvalidParams(String),
    #[error("hypothesis guard failed for claim {claim}: {why}")]
    GuardViolation { claim: String, why: String },
    #[error("prerequisite artifact missing: {0}")]
    PrerequisiteMissing(String),
    #[error("artifact hash mismatch for {path}: expected {expected}, found {found}")]
    HashMismatch { path: String, expected: String, found: String },
    #[error("malformed artifact {path}: {why}")]
    MalformedArtifact { path: String, why: String },

    // ---- numerical (exit code 3) ----
    #[error("spectral lower bound degenerate: min S = {min_s} < {threshold}")]
    DegenerateLowerBound { min_s: f64, threshold: f64 },
    #[error("ball of radius {radius} around point {i} would be empty")]
    DivisionByZeroBall { i: usize, radius: f64 },
    #[error("Neumann series diverges: ||R_{level}|| = {norm} >= 1 at finest available grid")]
    NeumannDivergence { level: usize, norm: f64 },
    #[error("sampling level too coarse for band limit {lambda}: need level {needed}, grid provides up to {available}")]
    LevelTooCoarse { lambda: f64, needed: i64, available: i64 },
    #[error("cubature moment system infeasible: residual {residual} > {tolerance}")]
    InfeasibleMoments { residual: f64, tolerance: f64 },

    // ---- io ----
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json error at {path}: {source}")]
    Json { path: String, source: serde_json::Error },

    // ---- pipeline context (exit code of the wrapped error) ----
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl Error {
    /// CLI exit code family: 2 validation, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            DegenerateLowerBound { .. }
            | DivisionByZeroBall { .. }
            | NeumannDivergence { .. }
            | LevelTooCoarse { .. }
            | InfeasibleMoments { .. } => 3,
            Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    /// Tag an error with the pipeline stage it escaped from.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
