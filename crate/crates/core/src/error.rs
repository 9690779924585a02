use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("ill-conditioned channel matrix (condition number {0:.3e})")]
    Conditioning(f64),

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("user {user} receives no useful power")]
    DegenerateUser { user: usize },

    #[error("beamformer recovery failed: {0}")]
    Recovery(String),

    #[error("stage-2 threshold interval is empty: {0}")]
    Stage2Infeasible(String),

    #[error("degenerate snapshot batch: {0}")]
    DegenerateBatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
