use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("trace deviates from one by {deviation:e}")]
    Trace { deviation: f64 },

    #[error("minimum eigenvalue {min_eigenvalue:e} below tolerance {tolerance:e}")]
    Positivity { min_eigenvalue: f64, tolerance: f64 },

    #[error(
        "degenerate spectrum: gap {gap:e} between levels {level} and {next} is below {gap_tol:e}"
    )]
    Degeneracy {
        level: usize,
        next: usize,
        gap: f64,
        gap_tol: f64,
    },

    #[error("frame continuity lost for level {level} at sample {sample}: overlap {overlap:e}")]
    Continuity {
        level: usize,
        sample: usize,
        overlap: f64,
    },

    #[error("step size {dt:e} exceeds bound {bound:e}")]
    StepSize { dt: f64, bound: f64 },

    #[error("time grids do not align: {0}")]
    GridMismatch(String),

    #[error("populations not normalized: {0}")]
    Normalization(String),

    #[error("coherence coupling violation: {0}")]
    Coupling(String),

    #[error("phase undefined at sample {sample}: |rho_ij| = {magnitude:e}")]
    PhaseUndefined { sample: usize, magnitude: f64 },

    #[error("phase unwrap ambiguous at sample {sample}: jump {jump:e} rad")]
    Unwrap { sample: usize, jump: f64 },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("outside validity regime: {0}")]
    Regime(String),

    #[error("basis tag mismatch: {0}")]
    Tag(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid path: {0}")]
    Path(String),

    #[error("cannot write output: {0}")]
    Output(String),
}

impl Error {
    /// Process exit status: 2 for invalid input or regime, 3 for numerical
    /// or output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Regime(_)
            | Error::Param(_)
            | Error::Path(_)
            | Error::Schedule(_)
            | Error::Tag(_)
            | Error::Dimension(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
